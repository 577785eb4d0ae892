#pragma once

// Annotated image collections: the native line-oriented JSON format and the
// CUB-200-2011 directory layout.

#include <posenorm/error.hpp>
#include <posenorm/geometry.hpp>

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace posenorm {

enum class Split { Train, Test };

inline std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

struct ImageRecord {
  std::string id;
  std::string path;  // relative paths resolve against Dataset::root
  int width = 0;     // 0 when unknown
  int height = 0;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Dataset {
  std::size_t part_count = 0;  // K
  std::vector<std::string> class_names;
  std::vector<std::string> part_names;  // optional, empty or size K
  std::vector<ImageRecord> images;
  std::vector<KeypointSet> keypoints;
  std::vector<int> labels;
  std::vector<Split> split;
  std::filesystem::path root;  // not serialized

  std::size_t size() const noexcept { return images.size(); }
  std::size_t class_count() const noexcept { return class_names.size(); }

  std::vector<std::size_t> indices(Split which) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (split[i] == which) out.push_back(i);
    return out;
  }

  std::filesystem::path image_path(std::size_t i) const {
    const std::filesystem::path p(images[i].path);
    return p.is_absolute() ? p : root / p;
  }

  int part_index(std::string_view name) const {
    for (std::size_t j = 0; j < part_names.size(); ++j)
      if (part_names[j] == name) return static_cast<int>(j);
    fail(ErrorKind::UnknownPart, "no part named '" + std::string(name) + "'");
  }

  void validate() const {
    const std::size_t n = images.size();
    if (keypoints.size() != n || labels.size() != n || split.size() != n) {
      fail(ErrorKind::FormatError, "dataset field lengths disagree");
    }
    if (!part_names.empty() && part_names.size() != part_count) {
      fail(ErrorKind::FormatError, "part name count differs from K");
    }
    std::set<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      if (keypoints[i].size() != part_count) {
        fail(ErrorKind::FormatError, "image " + images[i].id + " has " + std::to_string(keypoints[i].size()) +
                                         " keypoint slots, expected " + std::to_string(part_count));
      }
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_names.size()) {
        fail(ErrorKind::FormatError, "image " + images[i].id + " has label outside [0, n_classes)");
      }
      if (!ids.insert(images[i].id).second) fail(ErrorKind::FormatError, "duplicate image id " + images[i].id);
    }
  }

  // Field-for-field equality; the root directory is not part of the data.
  bool same_content(const Dataset& o) const {
    return part_count == o.part_count && class_names == o.class_names && part_names == o.part_names &&
           images == o.images && keypoints == o.keypoints && labels == o.labels && split == o.split;
  }
};

inline constexpr std::string_view kNativeDatasetVersion = "pnd1";

inline std::string native_header_line(const Dataset& ds) {
  nlohmann::ordered_json h;
  h["version"] = kNativeDatasetVersion;
  h["K"] = ds.part_count;
  h["class_names"] = ds.class_names;
  h["part_names"] = ds.part_names;
  h["n_images"] = ds.size();
  return h.dump();
}

inline std::string native_image_line(const Dataset& ds, std::size_t i) {
  nlohmann::ordered_json o;
  o["id"] = ds.images[i].id;
  o["path"] = ds.images[i].path;
  o["width"] = ds.images[i].width;
  o["height"] = ds.images[i].height;
  o["label"] = ds.labels[i];
  o["split"] = to_string(ds.split[i]);
  auto kps = nlohmann::ordered_json::array();
  for (const auto& k : ds.keypoints[i].points()) kps.push_back({k.location.x, k.location.y, k.visible ? 1 : 0});
  o["keypoints"] = std::move(kps);
  return o.dump();
}

inline void write_native(const Dataset& ds, std::ostream& out) {
  out << native_header_line(ds) << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) out << native_image_line(ds, i) << '\n';
}

inline void save_native(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::MissingFile, "cannot write " + path.string());
  write_native(ds, out);
}

inline Dataset read_native(std::istream& in, const std::string& source = "<stream>") {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] { return source + ":" + std::to_string(line_no); };

  if (!std::getline(in, line)) fail(ErrorKind::FormatError, source + ": missing header line");
  ++line_no;
  try {
    const auto h = nlohmann::json::parse(line);
    const std::string version = h.value("version", std::string("<none>"));
    if (version != kNativeDatasetVersion) {
      fail(ErrorKind::FormatError, where() + ": expected version " + std::string(kNativeDatasetVersion) +
                                       ", found " + version);
    }
    ds.part_count = h.at("K").get<std::size_t>();
    ds.class_names = h.at("class_names").get<std::vector<std::string>>();
    ds.part_names = h.value("part_names", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, where() + ": " + e.what());
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto o = nlohmann::json::parse(line);
      ImageRecord rec{o.at("id").get<std::string>(), o.at("path").get<std::string>(), o.at("width").get<int>(),
                      o.at("height").get<int>()};
      const std::string split = o.at("split").get<std::string>();
      if (split != "train" && split != "test") fail(ErrorKind::FormatError, where() + ": bad split '" + split + "'");
      const auto& kps = o.at("keypoints");
      if (kps.size() != ds.part_count) {
        fail(ErrorKind::FormatError, where() + ": expected " + std::to_string(ds.part_count) + " keypoints");
      }
      KeypointSet set(ds.part_count);
      for (std::size_t j = 0; j < ds.part_count; ++j) {
        set.set(j, {kps[j].at(0).get<double>(), kps[j].at(1).get<double>()}, kps[j].at(2).get<int>() != 0);
      }
      ds.images.push_back(std::move(rec));
      ds.keypoints.push_back(std::move(set));
      ds.labels.push_back(o.at("label").get<int>());
      ds.split.push_back(split == "train" ? Split::Train : Split::Test);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::FormatError, where() + ": " + e.what());
    }
  }
  ds.validate();
  return ds;
}

inline Dataset load_native(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, "cannot open " + path.string());
  Dataset ds = read_native(in, path.string());
  ds.root = path.parent_path();
  return ds;
}

// CUB-200-2011 ------------------------------------------------------------

namespace detail {

struct CubFile {
  std::filesystem::path path;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

// Splits each non-empty line on whitespace; `max_fields` > 0 keeps the tail
// of the line (names with spaces) in the final field.
inline CubFile read_cub_file(const std::filesystem::path& path, std::size_t max_fields, bool required = true) {
  CubFile f{path, {}, {}};
  std::ifstream in(path);
  if (!in) {
    if (required) fail(ErrorKind::MissingFile, "missing " + path.string());
    return f;
  }
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ss(line);
    std::vector<std::string> fields;
    std::string tok;
    while ((max_fields == 0 || fields.size() + 1 < max_fields) && ss >> tok) fields.push_back(tok);
    if (max_fields != 0) {
      std::string rest;
      std::getline(ss >> std::ws, rest);
      if (!rest.empty()) fields.push_back(rest);
    }
    f.rows.push_back(std::move(fields));
    f.line_numbers.push_back(n);
  }
  return f;
}

template <typename T>
T parse_cub_field(const CubFile& f, std::size_t row, std::size_t col) {
  const auto& r = f.rows[row];
  T value{};
  if (col < r.size()) {
    const char* first = r[col].data();
    const char* last = first + r[col].size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec == std::errc() && ptr == last) return value;
  }
  fail(ErrorKind::ParseError, f.path.string() + ":" + std::to_string(f.line_numbers[row]) + ": expected " +
                                  (std::is_integral_v<T> ? "integer" : "number") + " in field " +
                                  std::to_string(col + 1));
}

inline long parse_cub_int(const CubFile& f, std::size_t row, std::size_t col) {
  return parse_cub_field<long>(f, row, col);
}

inline double parse_cub_double(const CubFile& f, std::size_t row, std::size_t col) {
  return parse_cub_field<double>(f, row, col);
}

}  // namespace detail

// Reads the standard CUB layout. Keypoints stay in original image pixels;
// part_locs visibility 0 marks a keypoint invisible regardless of its
// coordinates. Image sizes are left at 0 (unknown); the CLI fills them in
// from the image headers when the images are present.
inline Dataset load_cub(const std::filesystem::path& root) {
  using detail::parse_cub_double;
  using detail::parse_cub_int;
  const auto images = detail::read_cub_file(root / "images.txt", 2);
  const auto labels = detail::read_cub_file(root / "image_class_labels.txt", 2);
  const auto split = detail::read_cub_file(root / "train_test_split.txt", 2);
  const auto parts = detail::read_cub_file(root / "parts" / "part_locs.txt", 0);
  const auto boxes = detail::read_cub_file(root / "bounding_boxes.txt", 0);
  const auto class_file = detail::read_cub_file(root / "classes.txt", 2, false);
  const auto part_file = detail::read_cub_file(root / "parts" / "parts.txt", 2, false);

  Dataset ds;
  ds.root = root / "images";

  std::map<long, std::size_t> index;  // CUB image id -> position
  for (std::size_t r = 0; r < images.rows.size(); ++r) {
    const long id = parse_cub_int(images, r, 0);
    if (images.rows[r].size() < 2) {
      fail(ErrorKind::ParseError, images.path.string() + ":" + std::to_string(images.line_numbers[r]) +
                                      ": missing image path");
    }
    if (!index.emplace(id, ds.images.size()).second) {
      fail(ErrorKind::InconsistentIds, "duplicate image id " + std::to_string(id) + " in images.txt");
    }
    ds.images.push_back({std::to_string(id), images.rows[r][1], 0, 0});
  }
  const std::size_t n = ds.images.size();

  auto check_ids = [&](const detail::CubFile& f, bool once_per_image) {
    std::set<long> seen;
    for (std::size_t r = 0; r < f.rows.size(); ++r) {
      const long id = parse_cub_int(f, r, 0);
      if (!index.count(id)) {
        fail(ErrorKind::InconsistentIds, f.path.string() + ":" + std::to_string(f.line_numbers[r]) +
                                             ": image id " + std::to_string(id) + " not in images.txt");
      }
      if (once_per_image && !seen.insert(id).second) {
        fail(ErrorKind::InconsistentIds, f.path.string() + ": duplicate image id " + std::to_string(id));
      }
      seen.insert(id);
    }
    if (seen.size() != n) {
      fail(ErrorKind::InconsistentIds, f.path.string() + " covers " + std::to_string(seen.size()) + " of " +
                                           std::to_string(n) + " images");
    }
  };
  check_ids(labels, true);
  check_ids(split, true);
  check_ids(boxes, true);
  check_ids(parts, false);

  ds.labels.assign(n, 0);
  long max_class = 0;
  for (std::size_t r = 0; r < labels.rows.size(); ++r) {
    const long cls = parse_cub_int(labels, r, 1);
    if (cls < 1) fail(ErrorKind::ParseError, labels.path.string() + ": class ids start at 1");
    ds.labels[index[parse_cub_int(labels, r, 0)]] = static_cast<int>(cls - 1);
    max_class = std::max(max_class, cls);
  }
  ds.split.assign(n, Split::Test);
  for (std::size_t r = 0; r < split.rows.size(); ++r) {
    ds.split[index[parse_cub_int(split, r, 0)]] = parse_cub_int(split, r, 1) == 1 ? Split::Train : Split::Test;
  }

  long max_part = 0;
  for (std::size_t r = 0; r < parts.rows.size(); ++r) max_part = std::max(max_part, parse_cub_int(parts, r, 1));
  ds.part_count = static_cast<std::size_t>(max_part);
  ds.keypoints.assign(n, KeypointSet(ds.part_count));
  for (std::size_t r = 0; r < parts.rows.size(); ++r) {
    const long part = parse_cub_int(parts, r, 1);
    if (part < 1) fail(ErrorKind::ParseError, parts.path.string() + ": part ids start at 1");
    const double x = parse_cub_double(parts, r, 2);
    const double y = parse_cub_double(parts, r, 3);
    const bool visible = parse_cub_int(parts, r, 4) != 0;
    ds.keypoints[index[parse_cub_int(parts, r, 0)]].set(static_cast<std::size_t>(part - 1), {x, y}, visible);
  }

  ds.class_names.resize(static_cast<std::size_t>(max_class));
  for (std::size_t c = 0; c < ds.class_names.size(); ++c) ds.class_names[c] = std::to_string(c + 1);
  for (std::size_t r = 0; r < class_file.rows.size(); ++r) {
    const long c = parse_cub_int(class_file, r, 0);
    if (c >= 1 && c <= max_class && class_file.rows[r].size() > 1) ds.class_names[c - 1] = class_file.rows[r][1];
  }
  if (!part_file.rows.empty()) {
    ds.part_names.resize(ds.part_count);
    for (std::size_t j = 0; j < ds.part_count; ++j) ds.part_names[j] = "part" + std::to_string(j + 1);
    for (std::size_t r = 0; r < part_file.rows.size(); ++r) {
      const long p = parse_cub_int(part_file, r, 0);
      if (p >= 1 && p <= max_part && part_file.rows[r].size() > 1) ds.part_names[p - 1] = part_file.rows[r][1];
    }
  }
  ds.validate();
  return ds;
}

}  // namespace posenorm
