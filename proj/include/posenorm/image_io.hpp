#pragma once

// PNG/JPEG decoding and PNG encoding for ImageRaster. Link posenorm::io.

#include <posenorm/error.hpp>
#include <posenorm/imaging.hpp>

#include <png.h>
#include <cstdio>
// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include <array>
#include <cmath>
#include <csetjmp>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace posenorm {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) {
    fail(std::string(mode).find('r') != std::string::npos ? ErrorKind::MissingFile : ErrorKind::InvalidArgument,
         "cannot open " + path.string());
  }
  return f;
}

inline std::array<unsigned char, 8> read_magic(const std::filesystem::path& path) {
  std::array<unsigned char, 8> magic{};
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, "cannot open " + path.string());
  in.read(reinterpret_cast<char*>(magic.data()), magic.size());
  return magic;
}

inline bool is_png(const std::array<unsigned char, 8>& m) { return png_sig_cmp(m.data(), 0, 8) == 0; }
inline bool is_jpeg(const std::array<unsigned char, 8>& m) { return m[0] == 0xFF && m[1] == 0xD8; }

inline float to_unit(unsigned v) { return static_cast<float>(v) / 255.0f; }

inline unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

}  // namespace detail

inline ImageRaster read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    fail(ErrorKind::FormatError, path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::FormatError, path.string() + ": " + msg);
  }
  ImageRaster out(static_cast<int>(image.width), static_cast<int>(image.height), color ? 3 : 1);
  for (std::size_t i = 0; i < buffer.size(); ++i) out.data[i] = detail::to_unit(buffer[i]);
  return out;
}

inline void write_png(const std::filesystem::path& path, const ImageRaster& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(img.data.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = detail::to_byte(img.data[i]);
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    fail(ErrorKind::InvalidArgument, path.string() + ": " + image.message);
  }
}

inline ImageRaster read_jpeg(const std::filesystem::path& path) {
  auto file = detail::open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  detail::JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = [](j_common_ptr info) {
    auto* e = reinterpret_cast<detail::JpegError*>(info->err);
    (*info->err->format_message)(info, e->message);
    std::longjmp(e->jump, 1);
  };
  // Nothing with a destructor may be created between setjmp and the end of decoding.
  ImageRaster out;
  std::vector<unsigned char> row;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::FormatError, path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out = ImageRaster(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height),
                    cinfo.output_components);
  row.resize(static_cast<std::size_t>(cinfo.output_width) * cinfo.output_components);
  while (cinfo.output_scanline < cinfo.output_height) {
    const auto y = cinfo.output_scanline;
    unsigned char* ptr = row.data();
    jpeg_read_scanlines(&cinfo, &ptr, 1);
    for (std::size_t i = 0; i < row.size(); ++i) out.data[y * row.size() + i] = detail::to_unit(row[i]);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

// Decodes PNG or JPEG by content, not extension.
inline ImageRaster read_image(const std::filesystem::path& path) {
  const auto magic = detail::read_magic(path);
  if (detail::is_png(magic)) return read_png(path);
  if (detail::is_jpeg(magic)) return read_jpeg(path);
  fail(ErrorKind::FormatError, path.string() + ": not a PNG or JPEG file");
}

// Width and height from the file header without decoding pixels.
inline std::pair<int, int> probe_image_size(const std::filesystem::path& path) {
  const auto magic = detail::read_magic(path);
  if (detail::is_png(magic)) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
      fail(ErrorKind::FormatError, path.string() + ": " + image.message);
    }
    const std::pair<int, int> size{static_cast<int>(image.width), static_cast<int>(image.height)};
    png_image_free(&image);
    return size;
  }
  if (detail::is_jpeg(magic)) {
    auto file = detail::open_file(path, "rb");
    jpeg_decompress_struct cinfo{};
    detail::JpegError err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = [](j_common_ptr info) {
      auto* e = reinterpret_cast<detail::JpegError*>(info->err);
      (*info->err->format_message)(info, e->message);
      std::longjmp(e->jump, 1);
    };
    if (setjmp(err.jump)) {
      jpeg_destroy_decompress(&cinfo);
      fail(ErrorKind::FormatError, path.string() + ": " + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    const std::pair<int, int> size{static_cast<int>(cinfo.image_width), static_cast<int>(cinfo.image_height)};
    jpeg_destroy_decompress(&cinfo);
    return size;
  }
  fail(ErrorKind::FormatError, path.string() + ": not a PNG or JPEG file");
}

}  // namespace posenorm
