#include <posenorm/image_io.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace posenorm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "posenorm_image_io";
  fs::create_directories(dir);
  return dir / name;
}

ImageRaster gradient(int w, int h, int channels) {
  ImageRaster img(w, h, channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) img.at(x, y, c) = static_cast<float>(((x * 7 + y * 3 + c * 50) % 256) / 255.0);
  return img;
}

void write_jpeg(const fs::path& path, const ImageRaster& img) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  ASSERT_NE(f, nullptr);
  jpeg_compress_struct cinfo{};
  jpeg_error_mgr jerr{};
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, f);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = img.channels;
  cinfo.in_color_space = img.channels == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, 98, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels);
  while (cinfo.next_scanline < cinfo.image_height) {
    const std::size_t base = cinfo.next_scanline * row.size();
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<unsigned char>(std::lround(img.data[base + i] * 255));
    unsigned char* ptr = row.data();
    jpeg_write_scanlines(&cinfo, &ptr, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(f);
}

}  // namespace

TEST(ImageIo, PngRoundTripIsExactOnByteValues) {
  for (int channels : {1, 3}) {
    const ImageRaster img = gradient(37, 21, channels);
    const fs::path path = scratch("rt" + std::to_string(channels) + ".png");
    write_png(path, img);
    const ImageRaster back = read_image(path);
    EXPECT_EQ(back, img);
    EXPECT_EQ(probe_image_size(path), std::make_pair(37, 21));
  }
}

TEST(ImageIo, JpegDecodesByContent) {
  const ImageRaster img(40, 24, 3, 0.4f);
  // Extension deliberately wrong: the decoder sniffs magic bytes.
  const fs::path path = scratch("photo.png");
  write_jpeg(path, img);
  EXPECT_EQ(probe_image_size(path), std::make_pair(40, 24));
  const ImageRaster back = read_image(path);
  ASSERT_EQ(back.width, 40);
  ASSERT_EQ(back.height, 24);
  ASSERT_EQ(back.channels, 3);
  for (float v : back.data) EXPECT_NEAR(v, 0.4f, 2.0f / 255.0f);
}

TEST(ImageIo, Errors) {
  auto kind = [](const fs::path& p) {
    try {
      read_image(p);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvalidArgument;
  };
  EXPECT_EQ(kind(scratch("does_not_exist.png")), ErrorKind::MissingFile);
  const fs::path junk = scratch("junk.jpg");
  std::ofstream(junk) << "definitely not an image";
  EXPECT_EQ(kind(junk), ErrorKind::FormatError);
  const fs::path truncated = scratch("truncated.jpg");
  {
    std::ofstream out(truncated, std::ios::binary);
    out << '\xFF' << '\xD8' << '\xFF' << "garbage";
  }
  EXPECT_EQ(kind(truncated), ErrorKind::FormatError);
}
