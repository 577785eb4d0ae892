#pragma once

// Per-region feature extraction (raw pixels, 31-channel HOG), precomputed
// feature files, and assembly of the concatenated multi-region vector.

#include <posenorm/error.hpp>
#include <posenorm/imaging.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace posenorm {

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<double> extract(const RegionCrop& crop) const = 0;
};

// Area-weighted box downsampling of a square raster to side x side.
inline ImageRaster box_downsample(const ImageRaster& img, int side) {
  if (side <= 0) fail(ErrorKind::InvalidArgument, "downsample side must be positive");
  ImageRaster out(side, side, img.channels);
  const double fx = static_cast<double>(img.width) / side, fy = static_cast<double>(img.height) / side;
  // Overlap of input pixel i with [a, b).
  auto overlap = [](int i, double a, double b) { return std::max(0.0, std::min<double>(i + 1, b) - std::max<double>(i, a)); };
  for (int v = 0; v < side; ++v) {
    const double y0 = v * fy, y1 = (v + 1) * fy;
    for (int u = 0; u < side; ++u) {
      const double x0 = u * fx, x1 = (u + 1) * fx;
      for (int c = 0; c < img.channels; ++c) {
        double sum = 0.0, weight = 0.0;
        for (int y = static_cast<int>(y0); y < std::min<double>(img.height, std::ceil(y1)); ++y) {
          const double wy = overlap(y, y0, y1);
          for (int x = static_cast<int>(x0); x < std::min<double>(img.width, std::ceil(x1)); ++x) {
            const double w = wy * overlap(x, x0, x1);
            sum += w * img.at(x, y, c);
            weight += w;
          }
        }
        out.at(u, v, c) = static_cast<float>(weight > 0.0 ? sum / weight : 0.0);
      }
    }
  }
  return out;
}

inline std::vector<double> extract_raw_pixels(const RegionCrop& crop, int side) {
  const ImageRaster small = box_downsample(crop.raster, side);
  return {small.data.begin(), small.data.end()};
}

class RawPixelExtractor : public FeatureExtractor {
 public:
  explicit RawPixelExtractor(int side, int channels = 1) : side_(side), channels_(channels) {
    if (side <= 0 || (channels != 1 && channels != 3)) fail(ErrorKind::InvalidArgument, "bad raw pixel settings");
  }
  std::string name() const override { return (channels_ == 3 ? "rgb" : "raw") + std::to_string(side_); }
  std::size_t dimension() const override { return static_cast<std::size_t>(side_) * side_ * channels_; }
  std::vector<double> extract(const RegionCrop& crop) const override {
    if (channels_ == 1 && crop.raster.channels != 1) {
      RegionCrop gray{to_gray(crop.raster), crop.source_warp, crop.valid_mask};
      return extract_raw_pixels(gray, side_);
    }
    if (crop.raster.channels != channels_) fail(ErrorKind::DimensionMismatch, "crop has too few channels");
    return extract_raw_pixels(crop, side_);
  }

 private:
  int side_;
  int channels_;
};

// HOG ---------------------------------------------------------------------

inline constexpr int kHogCells = 16;
inline constexpr int kHogChannels = 31;
inline constexpr std::size_t kHogDimension = kHogCells * kHogCells * kHogChannels;

// 31 channels per cell: 18 contrast-sensitive orientations, 9 contrast-
// insensitive ones, and 4 gradient-energy (texture) terms, each normalized
// against the 4 surrounding 2x2 cell blocks and truncated at 0.2. The crop is
// divided into a fixed 16x16 grid; blocks at the border reuse the nearest
// in-grid cells. Layout: cell-major (row, column), 31 values per cell.
inline std::vector<double> extract_hog(const RegionCrop& crop) {
  const ImageRaster& img = crop.raster;
  if (img.width != img.height) fail(ErrorKind::InvalidArgument, "HOG expects a square crop");
  if (img.width < 2 * kHogCells) fail(ErrorKind::InvalidArgument, "HOG crop must be at least 32 pixels");
  constexpr int n = kHogCells;
  constexpr double kClip = 0.2, kTexture = 0.2357, kEps = 1e-4;
  static const auto unit = [] {
    std::array<std::pair<double, double>, 9> u{};
    for (int o = 0; o < 9; ++o) u[o] = {std::cos(o * M_PI / 9.0), std::sin(o * M_PI / 9.0)};
    return u;
  }();

  const int w = img.width, h = img.height;
  const double sbin = static_cast<double>(w) / n;
  std::vector<double> hist(static_cast<std::size_t>(n) * n * 18, 0.0);
  auto cell = [&](int cx, int cy) { return (static_cast<std::size_t>(cy) * n + cx) * 18; };

  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      // Strongest channel wins.
      double dx = 0.0, dy = 0.0, mag2 = -1.0;
      for (int c = 0; c < img.channels; ++c) {
        const double gx = static_cast<double>(img.at(x + 1, y, c)) - img.at(x - 1, y, c);
        const double gy = static_cast<double>(img.at(x, y + 1, c)) - img.at(x, y - 1, c);
        if (gx * gx + gy * gy > mag2) {
          mag2 = gx * gx + gy * gy;
          dx = gx;
          dy = gy;
        }
      }
      if (mag2 <= 0.0) continue;
      const double mag = std::sqrt(mag2);
      double best_dot = 0.0;
      int best_o = 0;
      for (int o = 0; o < 9; ++o) {
        const double dot = unit[o].first * dx + unit[o].second * dy;
        if (dot > best_dot) {
          best_dot = dot;
          best_o = o;
        } else if (-dot > best_dot) {
          best_dot = -dot;
          best_o = o + 9;
        }
      }
      // Bilinear vote into the four nearest cells.
      const double xp = (x + 0.5) / sbin - 0.5, yp = (y + 0.5) / sbin - 0.5;
      const int ix = static_cast<int>(std::floor(xp)), iy = static_cast<int>(std::floor(yp));
      const double vx0 = xp - ix, vy0 = yp - iy, vx1 = 1.0 - vx0, vy1 = 1.0 - vy0;
      auto vote = [&](int cx, int cy, double weight) {
        if (cx >= 0 && cx < n && cy >= 0 && cy < n) hist[cell(cx, cy) + best_o] += weight * mag;
      };
      vote(ix, iy, vx1 * vy1);
      vote(ix + 1, iy, vx0 * vy1);
      vote(ix, iy + 1, vx1 * vy0);
      vote(ix + 1, iy + 1, vx0 * vy0);
    }
  }

  std::vector<double> energy(static_cast<std::size_t>(n) * n, 0.0);
  for (int cy = 0; cy < n; ++cy)
    for (int cx = 0; cx < n; ++cx)
      for (int o = 0; o < 9; ++o) {
        const double v = hist[cell(cx, cy) + o] + hist[cell(cx, cy) + o + 9];
        energy[static_cast<std::size_t>(cy) * n + cx] += v * v;
      }
  auto e = [&](int cx, int cy) {
    cx = std::clamp(cx, 0, n - 1);
    cy = std::clamp(cy, 0, n - 1);
    return energy[static_cast<std::size_t>(cy) * n + cx];
  };

  std::vector<double> out(kHogDimension, 0.0);
  for (int cy = 0; cy < n; ++cy) {
    for (int cx = 0; cx < n; ++cx) {
      std::array<double, 4> norm{};
      int k = 0;
      for (int oy : {-1, 0})
        for (int ox : {-1, 0}) {
          norm[k++] = 1.0 / std::sqrt(e(cx + ox, cy + oy) + e(cx + ox + 1, cy + oy) + e(cx + ox, cy + oy + 1) +
                                      e(cx + ox + 1, cy + oy + 1) + kEps);
        }
      double* dst = out.data() + (static_cast<std::size_t>(cy) * n + cx) * kHogChannels;
      const double* src = hist.data() + cell(cx, cy);
      std::array<double, 4> texture{};
      for (int o = 0; o < 18; ++o) {
        double sum = 0.0;
        for (int i = 0; i < 4; ++i) {
          const double v = std::min(src[o] * norm[i], kClip);
          sum += v;
          texture[i] += v;
        }
        dst[o] = 0.5 * sum;
      }
      for (int o = 0; o < 9; ++o) {
        double sum = 0.0;
        for (int i = 0; i < 4; ++i) sum += std::min((src[o] + src[o + 9]) * norm[i], kClip);
        dst[18 + o] = 0.5 * sum;
      }
      for (int i = 0; i < 4; ++i) dst[27 + i] = kTexture * texture[i];
    }
  }
  return out;
}

class HogExtractor : public FeatureExtractor {
 public:
  std::string name() const override { return "hog"; }
  std::size_t dimension() const override { return kHogDimension; }
  std::vector<double> extract(const RegionCrop& crop) const override { return extract_hog(crop); }
};

// Multi-region assembly ------------------------------------------------------

struct FeatureBlock {
  int region_index = 0;  // 0 is the whole image, p + 1 is prototype p
  std::string extractor;
  std::vector<double> values;
  bool present = true;
};

struct LayoutEntry {
  int region_index = 0;
  std::string extractor;
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const LayoutEntry&, const LayoutEntry&) = default;
};

class FeatureLayout {
 public:
  FeatureLayout() = default;

  void add(int region_index, std::string extractor, std::size_t length) {
    for (const auto& e : entries_) {
      if (e.region_index == region_index && e.extractor == extractor) {
        fail(ErrorKind::LayoutMismatch, "layout lists region " + std::to_string(region_index) + "/" + extractor + " twice");
      }
    }
    entries_.push_back({region_index, std::move(extractor), total_, length});
    total_ += length;
  }

  const std::vector<LayoutEntry>& entries() const noexcept { return entries_; }
  std::size_t total() const noexcept { return total_; }

  // FNV-1a over the entry table.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::string_view s) {
      for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
      }
    };
    for (const auto& e : entries_) {
      mix(std::to_string(e.region_index));
      mix("/");
      mix(e.extractor);
      mix("/");
      mix(std::to_string(e.length));
      mix(";");
    }
    return h;
  }

  friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;

 private:
  std::vector<LayoutEntry> entries_;
  std::size_t total_ = 0;
};

struct CombinedFeature {
  std::vector<FeatureBlock> blocks;  // in layout order
  std::vector<double> values;        // concatenation, length layout.total()
};

// Places each block at its layout slot, L2-normalizing present blocks.
// Absent and all-zero blocks contribute exact zeros.
inline CombinedFeature assemble(std::vector<FeatureBlock> blocks, const FeatureLayout& layout) {
  const auto& entries = layout.entries();
  std::vector<int> slot_of(blocks.size(), -1);
  std::vector<char> filled(entries.size(), 0);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto it = std::find_if(entries.begin(), entries.end(), [&](const LayoutEntry& e) {
      return e.region_index == blocks[b].region_index && e.extractor == blocks[b].extractor;
    });
    const std::string label = "region " + std::to_string(blocks[b].region_index) + "/" + blocks[b].extractor;
    if (it == entries.end()) fail(ErrorKind::LayoutMismatch, label + " is not in the layout");
    const auto slot = static_cast<std::size_t>(it - entries.begin());
    if (filled[slot]) fail(ErrorKind::LayoutMismatch, label + " supplied twice");
    if (blocks[b].present && blocks[b].values.size() != it->length) {
      fail(ErrorKind::LayoutMismatch, label + " has length " + std::to_string(blocks[b].values.size()) +
                                          ", layout expects " + std::to_string(it->length));
    }
    filled[slot] = 1;
    slot_of[b] = static_cast<int>(slot);
  }
  for (std::size_t s = 0; s < entries.size(); ++s) {
    if (!filled[s]) {
      fail(ErrorKind::LayoutMismatch,
           "missing block for region " + std::to_string(entries[s].region_index) + "/" + entries[s].extractor);
    }
  }

  CombinedFeature out;
  out.values.assign(layout.total(), 0.0);
  out.blocks.resize(entries.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    FeatureBlock& block = blocks[b];
    const LayoutEntry& e = entries[static_cast<std::size_t>(slot_of[b])];
    if (!block.present) {
      block.values.assign(e.length, 0.0);
    } else {
      double norm2 = 0.0;
      for (double v : block.values) norm2 += v * v;
      if (norm2 > 0.0) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& v : block.values) v *= inv;
      }
      std::copy(block.values.begin(), block.values.end(), out.values.begin() + static_cast<std::ptrdiff_t>(e.offset));
    }
    out.blocks[static_cast<std::size_t>(slot_of[b])] = std::move(block);
  }
  return out;
}

// Precomputed feature files ---------------------------------------------------
//
//   pnf1 <dimension> <extractor_name>
//   <image_id>\t<region_index>\t<v1>,<v2>,...,<vD>
//
// '#' lines and blank lines are ignored.

inline constexpr std::string_view kExternalFeatureVersion = "pnf1";

struct ExternalFeatures {
  std::size_t dimension = 0;
  std::string extractor;
  std::map<std::pair<std::string, int>, std::vector<double>> vectors;

  const std::vector<double>* find(const std::string& image_id, int region) const {
    const auto it = vectors.find({image_id, region});
    return it == vectors.end() ? nullptr : &it->second;
  }
};

inline ExternalFeatures read_external_features(std::istream& in, const std::string& source,
                                               std::size_t expected_dimension = 0) {
  ExternalFeatures out;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!have_header) {
      std::istringstream ss(line);
      std::string version;
      long long dim = -1;
      ss >> version >> dim >> out.extractor;
      if (version != kExternalFeatureVersion) {
        fail(ErrorKind::FormatError,
             where() + "expected version " + std::string(kExternalFeatureVersion) + ", found '" + version + "'");
      }
      if (dim <= 0 || out.extractor.empty()) fail(ErrorKind::FormatError, where() + "header needs a dimension and a name");
      out.dimension = static_cast<std::size_t>(dim);
      if (expected_dimension != 0 && out.dimension != expected_dimension) {
        fail(ErrorKind::DimensionMismatch, where() + "file declares dimension " + std::to_string(out.dimension) +
                                               ", expected " + std::to_string(expected_dimension));
      }
      have_header = true;
      continue;
    }
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) fail(ErrorKind::FormatError, where() + "expected image_id<TAB>region<TAB>values");
    const std::string id = line.substr(0, t1);
    const std::string_view region_text(line.data() + t1 + 1, t2 - t1 - 1);
    int region = 0;
    const auto [rp, rec] = std::from_chars(region_text.data(), region_text.data() + region_text.size(), region);
    if (id.empty() || rec != std::errc() || rp != region_text.data() + region_text.size() || region < 0) {
      fail(ErrorKind::FormatError, where() + "bad image id or region index");
    }
    std::vector<double> values;
    const char* p = line.data() + t2 + 1;
    const char* end = line.data() + line.size();
    while (p < end) {
      const char* comma = std::find(p, end, ',');
      double v = 0.0;
      const auto [vp, vec] = std::from_chars(p, comma, v);
      if (vec != std::errc() || vp != comma || !std::isfinite(v)) {
        fail(ErrorKind::FormatError, where() + "bad value #" + std::to_string(values.size() + 1));
      }
      values.push_back(v);
      p = comma == end ? end : comma + 1;
    }
    if (values.size() != out.dimension) {
      fail(ErrorKind::DimensionMismatch, where() + "record " + id + "/" + std::to_string(region) + " has " +
                                             std::to_string(values.size()) + " values, expected " +
                                             std::to_string(out.dimension));
    }
    if (!out.vectors.emplace(std::make_pair(id, region), std::move(values)).second) {
      fail(ErrorKind::FormatError, where() + "duplicate record " + id + "/" + std::to_string(region));
    }
  }
  if (!have_header) fail(ErrorKind::FormatError, source + ": missing pnf1 header");
  return out;
}

inline ExternalFeatures load_external_features(const std::filesystem::path& path, std::size_t expected_dimension = 0) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingFile, "cannot open " + path.string());
  return read_external_features(in, path.string(), expected_dimension);
}

// (image, region) pairs with no record; those blocks are zero-filled.
inline std::vector<std::pair<std::string, int>> missing_entries(const ExternalFeatures& f,
                                                                const std::vector<std::string>& image_ids,
                                                                int region_count) {
  std::vector<std::pair<std::string, int>> out;
  for (const auto& id : image_ids)
    for (int r = 0; r < region_count; ++r)
      if (!f.find(id, r)) out.emplace_back(id, r);
  return out;
}

inline void write_external_features(std::ostream& out, const ExternalFeatures& f) {
  out << kExternalFeatureVersion << ' ' << f.dimension << ' ' << f.extractor << '\n';
  char buf[32];
  for (const auto& [key, values] : f.vectors) {
    out << key.first << '\t' << key.second << '\t';
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto res = std::to_chars(buf, buf + sizeof buf, values[i]);
      if (i) out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

}  // namespace posenorm
