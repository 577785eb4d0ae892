#pragma once

// Rasters and pose-normalized region extraction. Coordinates refer to pixel
// centers: pixel (x, y) sits at integer position (x, y).

#include <posenorm/error.hpp>
#include <posenorm/geometry.hpp>
#include <posenorm/prototypes.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace posenorm {

struct ImageRaster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;  // row-major, interleaved channels, samples in [0, 1]

  ImageRaster() = default;
  ImageRaster(int w, int h, int c, float value = 0.0f) : width(w), height(h), channels(c) {
    if (w < 0 || h < 0 || (c != 1 && c != 3)) fail(ErrorKind::InvalidArgument, "bad raster shape");
    data.assign(static_cast<std::size_t>(w) * h * c, value);
  }

  bool empty() const noexcept { return data.empty(); }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  float at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  friend bool operator==(const ImageRaster&, const ImageRaster&) = default;
};

inline ImageRaster to_gray(const ImageRaster& img) {
  if (img.channels == 1) return img;
  ImageRaster out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(x, y) = 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) + 0.114f * img.at(x, y, 2);
  return out;
}

struct RegionCrop {
  ImageRaster raster;
  Warp source_warp;                // source pixels -> crop pixels
  std::vector<std::uint8_t> valid_mask;  // 1 where the sample came from inside the source

  bool valid(int x, int y) const { return valid_mask[static_cast<std::size_t>(y) * raster.width + x] != 0; }
};

inline constexpr float kDefaultFill = 0.5f;

inline RegionCrop warp_image(const ImageRaster& src, const Warp& w, int out_size, float fill = kDefaultFill) {
  if (out_size <= 0) fail(ErrorKind::InvalidArgument, "output size must be positive");
  const Warp inv = invert_warp(w);
  RegionCrop crop{ImageRaster(out_size, out_size, src.channels, fill), w,
                  std::vector<std::uint8_t>(static_cast<std::size_t>(out_size) * out_size, 0)};
  if (src.empty()) return crop;
  const double max_x = src.width - 1, max_y = src.height - 1;
  constexpr double kTol = 1e-9;
  for (int v = 0; v < out_size; ++v) {
    for (int u = 0; u < out_size; ++u) {
      Point2 p = apply_warp(inv, {static_cast<double>(u), static_cast<double>(v)});
      if (!(p.x >= -kTol && p.x <= max_x + kTol && p.y >= -kTol && p.y <= max_y + kTol)) continue;
      p.x = std::clamp(p.x, 0.0, max_x);
      p.y = std::clamp(p.y, 0.0, max_y);
      const int x0 = std::min(static_cast<int>(p.x), std::max(src.width - 2, 0));
      const int y0 = std::min(static_cast<int>(p.y), std::max(src.height - 2, 0));
      const int x1 = std::min(x0 + 1, src.width - 1);
      const int y1 = std::min(y0 + 1, src.height - 1);
      const double fx = p.x - x0, fy = p.y - y0;
      for (int c = 0; c < src.channels; ++c) {
        // Weighted form so integer sample positions reproduce source pixels exactly.
        const double top = (1.0 - fx) * src.at(x0, y0, c) + fx * src.at(x1, y0, c);
        const double bottom = (1.0 - fx) * src.at(x0, y1, c) + fx * src.at(x1, y1, c);
        crop.raster.at(u, v, c) = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
      crop.valid_mask[static_cast<std::size_t>(v) * out_size + u] = 1;
    }
  }
  return crop;
}

// Warp from source pixels to a side x side frame covering `box`, matching
// normalize_keypoints when side equals the canonical size.
inline Warp box_warp(const Box& box, double side) {
  Matrix23 m;
  m << side / box.width, 0.0, -box.x_min * side / box.width, 0.0, side / box.height, -box.y_min * side / box.height;
  return Warp::from_affine(m);
}

// Rescales a warp into a canonical frame of `canonical` pixels to one of
// `out_size` pixels.
inline Warp rescale_warp(const Warp& w, double canonical, int out_size) {
  if (static_cast<double>(out_size) == canonical) return w;
  const double k = out_size / canonical;
  return compose(Warp::from_similarity(k, 0.0, 0.0, 0.0), w);
}

// Pose-normalized crop of one prototype region, or nullopt when too few
// anchor parts are visible (the caller zero-fills the feature block).
inline std::optional<RegionCrop> extract_prototype_region(const ImageRaster& img, const KeypointSet& detected,
                                                          const Prototype& proto, WarpFamily family,
                                                          double canonical_size, int out_size,
                                                          float fill = kDefaultFill) {
  const auto fit = fit_region_warp(detected, proto, family);
  if (!fit) return std::nullopt;
  return warp_image(img, rescale_warp(fit->warp, canonical_size, out_size), out_size, fill);
}

inline std::optional<RegionCrop> extract_prototype_region(const ImageRaster& img, const KeypointSet& detected,
                                                          const PrototypeSet& set, std::size_t p, int out_size,
                                                          float fill = kDefaultFill) {
  return extract_prototype_region(img, detected, set.prototypes.at(p), set.family, set.canonical_size, out_size,
                                  fill);
}

// The whole image stretched onto an out_size square.
inline RegionCrop whole_image_region(const ImageRaster& img, int out_size) {
  if (img.empty()) fail(ErrorKind::InvalidArgument, "empty image");
  // Map pixel extents [-0.5, W-0.5] onto [-0.5, out-0.5].
  const double sx = static_cast<double>(out_size) / img.width, sy = static_cast<double>(out_size) / img.height;
  Matrix23 m;
  m << sx, 0.0, 0.5 * sx - 0.5, 0.0, sy, 0.5 * sy - 0.5;
  return warp_image(img, Warp::from_affine(m), out_size);
}

}  // namespace posenorm
