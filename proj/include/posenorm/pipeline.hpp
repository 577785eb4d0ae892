#pragma once

// Batch commands behind the posenorm tool. Each command reads its inputs from
// the config (defaulting to artifacts of earlier commands in the output
// directory) and writes deterministic artifacts stamped with the config hash.

#include <posenorm/classify.hpp>
#include <posenorm/dataset.hpp>
#include <posenorm/extraction.hpp>
#include <posenorm/image_io.hpp>
#include <posenorm/prototypes.hpp>
#include <posenorm/synthetic.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace posenorm {

namespace fs = std::filesystem;

struct PipelineConfig {
  // [run]
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  fs::path out = "out";

  // [dataset]
  fs::path annotations;  // default <out>/dataset.jsonl
  fs::path predicted;    // optional, same ids as annotations
  fs::path image_root;   // default: directory of the annotation file
  std::string format = "native";  // ingest input: native | cub
  fs::path source;                // ingest input path

  // [synth]
  SyntheticConfig synth;

  // [prototypes]
  std::string scheme = "learned";  // learned | head_body | rand_pairs | cub_keypoints | none
  PrototypeLearnConfig proto;
  std::vector<std::string> head_parts{"beak", "crown", "forehead", "left eye", "right eye", "nape", "throat"};
  std::vector<std::string> body_parts{"back", "belly", "breast", "left wing", "right wing", "tail"};
  std::size_t rand_pairs = 6;

  // [features]
  std::vector<std::string> extractors{"hog"};
  bool whole_image = true;
  int crop_size = 64;
  std::vector<fs::path> external;
  std::vector<fs::path> external_predicted;

  // [train]
  TrainConfig train;

  // [regions]
  int region_png_size = 0;  // 0: canonical size

  fs::path dataset_path() const { return annotations.empty() ? out / "dataset.jsonl" : annotations; }
  fs::path prototypes_path() const { return out / "prototypes.json"; }
  fs::path model_path() const { return out / "model.json"; }
};

// Settings -----------------------------------------------------------------

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T v{};
  const std::string t = trim(value);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) {
    fail(ErrorKind::InvalidArgument, "setting " + key + ": '" + value + "' is not a valid number");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  const std::string t = trim(value);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  fail(ErrorKind::InvalidArgument, "setting " + key + ": '" + value + "' is not a boolean");
}

}  // namespace detail

// Applies one "section.key = value" setting; unknown keys are rejected so
// typos do not silently fall back to defaults.
inline void apply_setting(PipelineConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  auto paths = [](const std::string& v) {
    std::vector<fs::path> out;
    for (const auto& s : detail::split_list(v)) out.emplace_back(s);
    return out;
  };
  const std::string v = detail::trim(value);
  if (key == "run.seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "run.workers") c.workers = parse_number<std::size_t>(key, v);
  else if (key == "run.out") c.out = v;
  else if (key == "dataset.annotations") c.annotations = v;
  else if (key == "dataset.predicted") c.predicted = v;
  else if (key == "dataset.image_root") c.image_root = v;
  else if (key == "dataset.format") c.format = v;
  else if (key == "dataset.source") c.source = v;
  else if (key == "synth.classes") c.synth.n_classes = parse_number<std::size_t>(key, v);
  else if (key == "synth.images_per_class") c.synth.images_per_class = parse_number<std::size_t>(key, v);
  else if (key == "synth.parts") c.synth.parts = parse_number<std::size_t>(key, v);
  else if (key == "synth.image_size") c.synth.image_size = parse_number<int>(key, v);
  else if (key == "synth.pose_clusters") c.synth.pose_clusters = parse_number<std::size_t>(key, v);
  else if (key == "synth.noise_sigma") c.synth.noise_sigma = parse_number<double>(key, v);
  else if (key == "synth.occlusion") c.synth.occlusion = parse_number<double>(key, v);
  else if (key == "synth.rotation_range") c.synth.rotation_range = parse_number<double>(key, v);
  else if (key == "synth.train_fraction") c.synth.train_fraction = parse_number<double>(key, v);
  else if (key == "synth.pixel_noise") c.synth.pixel_noise = parse_number<double>(key, v);
  else if (key == "prototypes.scheme") c.scheme = v;
  else if (key == "prototypes.lambda") c.proto.lambda = parse_number<double>(key, v);
  else if (key == "prototypes.neighbors") c.proto.neighbors = parse_number<std::size_t>(key, v);
  else if (key == "prototypes.box_expansion") c.proto.box_expansion = parse_number<double>(key, v);
  else if (key == "prototypes.canonical_size") c.proto.canonical_size = parse_number<double>(key, v);
  else if (key == "prototypes.family") c.proto.family = parse_warp_family(v);
  else if (key == "prototypes.anchor_subsample") c.proto.anchor_subsample = parse_number<std::size_t>(key, v);
  else if (key == "prototypes.min_box_side") c.proto.min_box_side = parse_number<double>(key, v);
  else if (key == "prototypes.head_parts") c.head_parts = detail::split_list(v);
  else if (key == "prototypes.body_parts") c.body_parts = detail::split_list(v);
  else if (key == "prototypes.rand_pairs") c.rand_pairs = parse_number<std::size_t>(key, v);
  else if (key == "features.extractors") c.extractors = detail::split_list(v);
  else if (key == "features.whole_image") c.whole_image = detail::parse_bool(key, v);
  else if (key == "features.crop_size") c.crop_size = parse_number<int>(key, v);
  else if (key == "features.external") c.external = paths(v);
  else if (key == "features.external_predicted") c.external_predicted = paths(v);
  else if (key == "train.C") c.train.C = parse_number<double>(key, v);
  else if (key == "train.epochs") c.train.epochs = parse_number<std::size_t>(key, v);
  else if (key == "train.step_offset") c.train.step_offset = parse_number<double>(key, v);
  else if (key == "regions.png_size") c.region_png_size = parse_number<int>(key, v);
  else fail(ErrorKind::InvalidArgument, "unknown setting '" + key + "'");
}

// INI-style file: [section] headers, key = value lines, ';' comments.
// Relative paths in the file resolve against the file's directory.
inline void apply_config_file(PipelineConfig& c, const fs::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingFile, "cannot open config " + path.string());
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorKind::InvalidArgument, "config " + path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  const fs::path base = path.parent_path();
  for (const auto& [section, body] : tree) {
    if (body.empty()) fail(ErrorKind::InvalidArgument, "config " + path.string() + ": key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      const std::string full = section + "." + key;
      std::string value = node.get_value<std::string>();
      const bool is_path = full == "run.out" || full == "dataset.annotations" || full == "dataset.predicted" ||
                           full == "dataset.image_root" || full == "dataset.source";
      const bool is_path_list = full == "features.external" || full == "features.external_predicted";
      if (is_path && !value.empty() && fs::path(value).is_relative()) value = (base / value).lexically_normal().string();
      if (is_path_list) {
        std::string joined;
        for (const auto& p : detail::split_list(value)) {
          joined += (joined.empty() ? "" : ",") + (fs::path(p).is_relative() ? (base / p).lexically_normal().string() : p);
        }
        value = joined;
      }
      apply_setting(c, full, value);
    }
  }
}

// Derived seeds keep the stages independent while depending only on the root.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stage) {
  std::uint64_t z = root + 0x9e3779b97f4a7c15ull * (stage + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Pushes the root seed and worker count into the stage configs.
inline void finalize(PipelineConfig& c) {
  if (c.workers == 0) c.workers = default_workers();
  c.synth.rng_seed = c.seed;
  c.synth.workers = c.workers;
  c.proto.rng_seed = derive_seed(c.seed, 1);
  c.proto.workers = c.workers;
  c.train.rng_seed = derive_seed(c.seed, 2);
  c.train.workers = c.workers;
}

// Everything that can influence results; the worker count and the output
// directory are left out because they do not.
inline nlohmann::ordered_json config_json(const PipelineConfig& c) {
  auto paths = [](const std::vector<fs::path>& ps) {
    std::vector<std::string> out;
    for (const auto& p : ps) out.push_back(p.generic_string());
    return out;
  };
  nlohmann::ordered_json j;
  j["run"] = {{"seed", c.seed}};
  j["dataset"] = {{"annotations", c.annotations.generic_string()},
                  {"predicted", c.predicted.generic_string()},
                  {"image_root", c.image_root.generic_string()},
                  {"format", c.format},
                  {"source", c.source.generic_string()}};
  j["synth"] = {{"classes", c.synth.n_classes},         {"images_per_class", c.synth.images_per_class},
                {"parts", c.synth.parts},               {"image_size", c.synth.image_size},
                {"pose_clusters", c.synth.pose_clusters}, {"noise_sigma", c.synth.noise_sigma},
                {"occlusion", c.synth.occlusion},       {"rotation_range", c.synth.rotation_range},
                {"train_fraction", c.synth.train_fraction}, {"pixel_noise", c.synth.pixel_noise}};
  j["prototypes"] = {{"scheme", c.scheme},
                     {"lambda", c.proto.lambda},
                     {"neighbors", c.proto.neighbors},
                     {"box_expansion", c.proto.box_expansion},
                     {"canonical_size", c.proto.canonical_size},
                     {"family", to_string(c.proto.family)},
                     {"anchor_subsample", c.proto.anchor_subsample},
                     {"min_box_side", c.proto.min_box_side},
                     {"head_parts", c.head_parts},
                     {"body_parts", c.body_parts},
                     {"rand_pairs", c.rand_pairs}};
  j["features"] = {{"extractors", c.extractors},
                   {"whole_image", c.whole_image},
                   {"crop_size", c.crop_size},
                   {"external", paths(c.external)},
                   {"external_predicted", paths(c.external_predicted)}};
  j["train"] = {{"C", c.train.C}, {"epochs", c.train.epochs}, {"step_offset", c.train.step_offset}};
  j["regions"] = {{"png_size", c.region_png_size}};
  return j;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string config_hash(const PipelineConfig& c) { return fingerprint_hex(fnv1a(config_json(c).dump())); }

// Artifacts ------------------------------------------------------------------

namespace detail {

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::MissingFile, "cannot create " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::MissingFile, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::MissingFile, "write failed: " + path.string());
}

inline void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingFile, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, path.string() + ": " + e.what());
  }
}

inline nlohmann::ordered_json stamp(const PipelineConfig& c, const std::string& command) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config_hash"] = config_hash(c);
  j["config"] = config_json(c);
  return j;
}

inline std::string fixed(double v, int digits = 9) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

}  // namespace detail

inline Dataset load_dataset(const PipelineConfig& c) {
  Dataset ds = load_native(c.dataset_path());
  if (!c.image_root.empty()) ds.root = c.image_root;
  return ds;
}

// The annotation dataset with keypoints replaced by the predicted file's.
inline Dataset load_predicted(const PipelineConfig& c, const Dataset& truth) {
  const Dataset pred = load_native(c.predicted);
  if (pred.part_count != truth.part_count) fail(ErrorKind::FormatError, "predicted keypoints have a different K");
  std::map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < pred.size(); ++i) where[pred.images[i].id] = i;
  Dataset out = truth;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto it = where.find(out.images[i].id);
    if (it == where.end()) {
      if (out.split[i] == Split::Test) {
        fail(ErrorKind::InconsistentIds, "predicted keypoints missing for test image " + out.images[i].id);
      }
      continue;
    }
    out.keypoints[i] = pred.keypoints[it->second];
  }
  return out;
}

inline PrototypeSet load_prototypes(const PipelineConfig& c) {
  return prototype_set_from_json(detail::read_json(c.prototypes_path()));
}

// ingest ---------------------------------------------------------------------

struct IngestReport {
  std::size_t images = 0, classes = 0, parts = 0, train = 0, test = 0, sizes_probed = 0;
};

inline IngestReport cmd_ingest(const PipelineConfig& c) {
  if (c.source.empty()) fail(ErrorKind::InvalidArgument, "ingest needs dataset.source");
  Dataset ds;
  if (c.format == "cub") {
    ds = load_cub(c.source);
  } else if (c.format == "native") {
    ds = load_native(c.source);
  } else {
    fail(ErrorKind::InvalidArgument, "unknown dataset format '" + c.format + "' (native or cub)");
  }
  IngestReport r;
  // Resolve image paths so the copy in the output directory stays usable.
  std::vector<char> probed(ds.size(), 0);
  parallel_for(ds.size(), c.workers, [&](std::size_t i) {
    const fs::path p = ds.image_path(i);
    ds.images[i].path = fs::absolute(p).lexically_normal().generic_string();
    if (ds.images[i].width > 0 && ds.images[i].height > 0) return;
    std::error_code ec;
    if (!fs::exists(p, ec)) return;
    const auto [w, h] = probe_image_size(p);
    ds.images[i].width = w;
    ds.images[i].height = h;
    probed[i] = 1;
  });
  r.sizes_probed = static_cast<std::size_t>(std::count(probed.begin(), probed.end(), 1));
  detail::ensure_dir(c.out);
  save_native(ds, c.out / "dataset.jsonl");
  r.images = ds.size();
  r.classes = ds.class_count();
  r.parts = ds.part_count;
  r.train = ds.indices(Split::Train).size();
  r.test = ds.indices(Split::Test).size();
  auto j = detail::stamp(c, "ingest");
  j["images"] = r.images;
  j["classes"] = r.classes;
  j["parts"] = r.parts;
  j["train"] = r.train;
  j["test"] = r.test;
  j["sizes_probed"] = r.sizes_probed;
  detail::write_json(c.out / "ingest_report.json", j);
  return r;
}

// synth ----------------------------------------------------------------------

inline Dataset cmd_synth(const PipelineConfig& c) {
  SyntheticConfig sc = c.synth;
  sc.render = true;
  SyntheticData data = generate_synthetic(sc);
  detail::ensure_dir(c.out / "images");
  for (auto& rec : data.dataset.images) rec.path = "images/" + rec.id + ".png";
  parallel_for(data.images.size(), c.workers,
               [&](std::size_t i) { write_png(c.out / data.dataset.images[i].path, data.images[i]); });
  save_native(data.dataset, c.out / "dataset.jsonl");
  auto j = detail::stamp(c, "synth");
  j["images"] = data.dataset.size();
  j["classes"] = data.dataset.class_count();
  j["parts"] = data.dataset.part_count;
  j["pose_cluster"] = data.pose_cluster;
  detail::write_json(c.out / "synth_report.json", j);
  data.dataset.root = c.out;
  return data.dataset;
}

// learn-prototypes -------------------------------------------------------------

inline int resolve_part(const Dataset& ds, const std::string& name) {
  int idx = 0;
  const auto [p, ec] = std::from_chars(name.data(), name.data() + name.size(), idx);
  if (ec == std::errc() && p == name.data() + name.size()) return idx;
  return ds.part_index(name);
}

struct LearnReport {
  PrototypeSet prototypes;
  std::optional<LearnResult> learned;  // set for the learned scheme
};

inline LearnReport cmd_learn_prototypes(const PipelineConfig& c) {
  const Dataset ds = load_dataset(c);
  LearnReport r;
  auto report = detail::stamp(c, "learn-prototypes");
  report["scheme"] = c.scheme;
  if (c.scheme == "learned") {
    r.learned = learn_prototypes(ds, c.proto);
    r.prototypes = r.learned->prototypes;
    report["lambda"] = r.learned->lambda;
    report["objective"] = r.learned->objective;
    report["prototype_count"] = r.prototypes.prototypes.size();
    report["candidate_count"] = r.learned->candidate_count;
    report["city_count"] = r.learned->city_cost.size();
    report["slot_count"] = ds.indices(Split::Train).size() * ds.part_count;
    auto protos = nlohmann::ordered_json::array();
    for (std::size_t p = 0; p < r.prototypes.prototypes.size(); ++p) {
      const auto& a = r.learned->selected_anchors[p];
      protos.push_back({{"index", p},
                        {"ref_image", r.prototypes.prototypes[p].ref_image},
                        {"anchor_part", a.part},
                        {"assigned_keypoints", r.learned->assignment_counts[p]}});
    }
    report["prototypes"] = std::move(protos);
  } else if (c.scheme == "head_body" || c.scheme == "rand_pairs" || c.scheme == "cub_keypoints" || c.scheme == "none") {
    if (c.scheme == "head_body") {
      HeadBodyScheme hb;
      for (const auto& n : c.head_parts) hb.head_parts.push_back(resolve_part(ds, n));
      for (const auto& n : c.body_parts) hb.body_parts.push_back(resolve_part(ds, n));
      r.prototypes = baseline_regions(hb, ds, c.proto);
    } else if (c.scheme == "rand_pairs") {
      r.prototypes = baseline_regions(RandPairsScheme{c.rand_pairs, derive_seed(c.seed, 3)}, ds, c.proto);
    } else if (c.scheme == "cub_keypoints") {
      r.prototypes = baseline_regions(CubKeypointsScheme{}, ds, c.proto);
    } else {
      r.prototypes.canonical_size = c.proto.canonical_size;
      r.prototypes.family = c.proto.family;
    }
    report["prototype_count"] = r.prototypes.prototypes.size();
  } else {
    fail(ErrorKind::InvalidArgument, "unknown prototype scheme '" + c.scheme + "'");
  }
  detail::ensure_dir(c.out);
  detail::write_json(c.prototypes_path(), to_json(r.prototypes));
  detail::write_json(c.out / "prototypes_report.json", report);
  return r;
}

// warp-regions -----------------------------------------------------------------

struct WarpRegionsReport {
  std::size_t crops_written = 0;
  std::size_t regions_skipped = 0;  // too few visible anchors
  double total_error = 0.0;         // training split, each keypoint at its best prototype
  std::size_t slots = 0;            // n * K over the training split
  std::size_t uncovered = 0;        // visible training keypoints no prototype can align
  double objective = 0.0;           // lambda * P + total_error / slots
};

inline WarpRegionsReport cmd_warp_regions(const PipelineConfig& c) {
  const Dataset ds = load_dataset(c);
  const PrototypeSet set = load_prototypes(c);
  const auto prototypes_report = detail::read_json(c.out / "prototypes_report.json");
  const double lambda = prototypes_report.value("lambda", c.proto.lambda);
  const int side = c.region_png_size > 0 ? c.region_png_size : static_cast<int>(std::lround(set.canonical_size));
  const std::size_t P = set.prototypes.size();
  detail::ensure_dir(c.out / "regions");

  std::vector<std::size_t> written(ds.size(), 0);
  parallel_for(ds.size(), c.workers, [&](std::size_t i) {
    if (P == 0) return;
    const ImageRaster img = read_image(ds.image_path(i));
    for (std::size_t p = 0; p < P; ++p) {
      const auto crop = extract_prototype_region(img, ds.keypoints[i], set, p, side);
      if (!crop) continue;
      write_png(c.out / "regions" / (ds.images[i].id + "_" + std::to_string(p) + ".png"), crop->raster);
      ++written[i];
    }
  });

  WarpRegionsReport r;
  for (auto w : written) r.crops_written += w;
  r.regions_skipped = ds.size() * P - r.crops_written;

  std::ostringstream csv;
  csv << "image_id,part,prototype,squared_error\n";
  const auto train = ds.indices(Split::Train);
  std::vector<std::vector<std::vector<double>>> costs(train.size());
  parallel_for(train.size(), c.workers, [&](std::size_t k) {
    for (const auto& proto : set.prototypes) costs[k].push_back(alignment_costs(ds.keypoints[train[k]], proto, set.family));
  });
  r.slots = train.size() * ds.part_count;
  for (std::size_t k = 0; k < train.size(); ++k) {
    const std::size_t i = train[k];
    for (std::size_t j = 0; j < ds.part_count; ++j) {
      if (!ds.keypoints[i][j].visible) continue;
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_p = 0;
      for (std::size_t p = 0; p < P; ++p) {
        if (costs[k][p][j] < best) {
          best = costs[k][p][j];
          best_p = p;
        }
      }
      if (!std::isfinite(best)) {
        ++r.uncovered;
        csv << ds.images[i].id << ',' << j << ",," << "inf\n";
        continue;
      }
      r.total_error += best;
      csv << ds.images[i].id << ',' << j << ',' << best_p << ',' << detail::fixed(best, 12) << '\n';
    }
  }
  r.objective = lambda * static_cast<double>(P) + (r.slots ? r.total_error / static_cast<double>(r.slots) : 0.0);
  detail::write_text(c.out / "alignment_errors.csv", csv.str());

  auto j = detail::stamp(c, "warp-regions");
  j["crop_size"] = side;
  j["crops_written"] = r.crops_written;
  j["regions_skipped"] = r.regions_skipped;
  j["lambda"] = lambda;
  j["prototype_count"] = P;
  j["slot_count"] = r.slots;
  j["uncovered_keypoints"] = r.uncovered;
  j["total_squared_error"] = r.total_error;
  j["objective"] = r.objective;
  detail::write_json(c.out / "warp_report.json", j);
  return r;
}

// extract ----------------------------------------------------------------------

inline std::shared_ptr<const FeatureExtractor> make_extractor(const std::string& name) {
  if (name == "hog") return std::make_shared<HogExtractor>();
  if (name.rfind("raw", 0) == 0 || name.rfind("rgb", 0) == 0) {
    int side = 0;
    const std::string digits = name.substr(3);
    const auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), side);
    if (ec == std::errc() && p == digits.data() + digits.size() && side > 0) {
      return std::make_shared<RawPixelExtractor>(side, name[1] == 'g' ? 3 : 1);
    }
  }
  fail(ErrorKind::InvalidArgument, "unknown extractor '" + name + "' (hog, raw<N>, rgb<N>)");
}

inline FeaturePlan make_plan(const PipelineConfig& c, const PrototypeSet& set,
                             const std::vector<ExternalFeatures>& external) {
  FeaturePlan plan;
  plan.prototypes = set;
  plan.whole_image = c.whole_image;
  plan.crop_size = c.crop_size;
  for (const auto& n : c.extractors) plan.extractors.push_back(make_extractor(n));
  for (const auto& e : external) plan.external.push_back(&e);
  if (plan.layout().total() == 0) fail(ErrorKind::InvalidArgument, "the feature plan produces no features");
  return plan;
}

inline std::vector<ExternalFeatures> load_externals(const std::vector<fs::path>& paths) {
  std::vector<ExternalFeatures> out;
  for (const auto& p : paths) out.push_back(load_external_features(p));
  return out;
}

inline FeatureMatrix features_for(const PipelineConfig& c, const Dataset& ds, const PrototypeSet& set,
                                  const std::vector<ExternalFeatures>& external, Split split) {
  const FeaturePlan plan = make_plan(c, set, external);
  return compute_features(
      ds, ds.indices(split), [&](std::size_t i) { return read_image(ds.image_path(i)); }, plan, c.workers);
}

inline nlohmann::ordered_json layout_json(const FeatureLayout& layout) {
  auto entries = nlohmann::ordered_json::array();
  for (const auto& e : layout.entries())
    entries.push_back({{"region", e.region_index}, {"extractor", e.extractor}, {"offset", e.offset}, {"length", e.length}});
  return {{"fingerprint", fingerprint_hex(layout.fingerprint())}, {"total", layout.total()}, {"entries", entries}};
}

inline fs::path feature_file(const PipelineConfig& c, Split s) {
  return c.out / ("features_" + std::string(to_string(s)) + ".pnf1");
}

// Writes one combined vector per image as a pnf1 file (region 0, extractor
// "combined"), plus the layout and block presence in a sidecar.
inline void cmd_extract(const PipelineConfig& c) {
  const Dataset ds = load_dataset(c);
  const PrototypeSet set = load_prototypes(c);
  const auto external = load_externals(c.external);
  auto report = detail::stamp(c, "extract");
  for (Split s : {Split::Train, Split::Test}) {
    const FeatureMatrix m = features_for(c, ds, set, external, s);
    ExternalFeatures f;
    f.dimension = m.layout.total();
    f.extractor = "combined";
    for (std::size_t k = 0; k < m.images.size(); ++k) f.vectors[{ds.images[m.images[k]].id, 0}] = m.rows[k];
    std::ostringstream out;
    write_external_features(out, f);
    detail::write_text(feature_file(c, s), out.str());
    std::size_t absent = 0;
    for (const auto& row : m.present) absent += static_cast<std::size_t>(std::count(row.begin(), row.end(), 0));
    report[std::string(to_string(s))] = {{"images", m.images.size()}, {"zero_filled_blocks", absent}};
    report["layout"] = layout_json(m.layout);
  }
  detail::write_json(c.out / "features_report.json", report);
}

// train ------------------------------------------------------------------------

struct LoadedFeatures {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::uint64_t fingerprint = 0;
};

inline LoadedFeatures load_feature_file(const PipelineConfig& c, const Dataset& ds, Split s) {
  const auto report = detail::read_json(c.out / "features_report.json");
  LoadedFeatures out;
  try {
    out.fingerprint = std::stoull(report.at("layout").at("fingerprint").get<std::string>(), nullptr, 16);
  } catch (const std::exception& e) {
    fail(ErrorKind::FormatError, "features_report.json: " + std::string(e.what()));
  }
  const auto f = load_external_features(feature_file(c, s));
  for (std::size_t i : ds.indices(s)) {
    const auto* v = f.find(ds.images[i].id, 0);
    if (!v) fail(ErrorKind::InconsistentIds, feature_file(c, s).string() + ": no vector for image " + ds.images[i].id);
    out.rows.push_back(*v);
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

inline LinearModel cmd_train(const PipelineConfig& c) {
  const Dataset ds = load_dataset(c);
  const LoadedFeatures f = load_feature_file(c, ds, Split::Train);
  const LinearModel m = train_ova(f.rows, f.labels, ds.class_count(), c.train, f.fingerprint);
  auto j = to_json(m);
  j["class_names"] = ds.class_names;
  j["config_hash"] = config_hash(c);
  j["config"] = config_json(c);
  detail::write_json(c.model_path(), j);
  return m;
}

// eval -------------------------------------------------------------------------

struct EvalReport {
  AccuracyReport ground_truth;
  std::optional<AccuracyReport> predicted;
};

inline EvalReport cmd_eval(const PipelineConfig& c) {
  const Dataset ds = load_dataset(c);
  const LinearModel m = model_from_json(detail::read_json(c.model_path()));
  const LoadedFeatures gt = load_feature_file(c, ds, Split::Test);
  std::vector<int> pred;
  for (const auto& row : gt.rows) pred.push_back(predict(m, row, gt.fingerprint));
  EvalReport r{evaluate_predictions(pred, gt.labels, m.n_classes), std::nullopt};

  if (!c.predicted.empty()) {
    const Dataset pds = load_predicted(c, ds);
    const auto external = load_externals(c.external_predicted.empty() ? c.external : c.external_predicted);
    const FeatureMatrix fm = features_for(c, pds, load_prototypes(c), external, Split::Test);
    std::vector<int> labels, ppred;
    for (std::size_t k = 0; k < fm.rows.size(); ++k) {
      labels.push_back(pds.labels[fm.images[k]]);
      ppred.push_back(predict(m, fm.rows[k], fm.layout.fingerprint()));
    }
    r.predicted = evaluate_predictions(ppred, labels, m.n_classes);
  }

  auto accuracy_json = [&](const AccuracyReport& a) {
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (double v : a.per_class_accuracy) per.push_back(std::isnan(v) ? nlohmann::ordered_json() : nlohmann::ordered_json(v));
    return nlohmann::ordered_json{{"accuracy", a.accuracy}, {"per_class_accuracy", per}, {"confusion", a.confusion}};
  };
  auto j = detail::stamp(c, "eval");
  j["model_layout_fingerprint"] = fingerprint_hex(m.layout_fingerprint);
  j["test_images"] = gt.rows.size();
  j["ground_truth_keypoints"] = accuracy_json(r.ground_truth);
  if (r.predicted) j["predicted_keypoints"] = accuracy_json(*r.predicted);
  detail::write_json(c.out / "eval.json", j);

  std::ostringstream txt;
  txt << "config " << config_hash(c) << "\n";
  txt << "test images " << gt.rows.size() << "\n";
  txt << "keypoints      accuracy\n";
  txt << "ground truth   " << detail::fixed(100.0 * r.ground_truth.accuracy, 2) << "%\n";
  if (r.predicted) txt << "predicted      " << detail::fixed(100.0 * r.predicted->accuracy, 2) << "%\n";
  detail::write_text(c.out / "eval.txt", txt.str());
  return r;
}

// Exit status for a library error: 1 usage, 2 data or format, 3 infeasible.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return 1;
    case ErrorKind::Infeasible:
    case ErrorKind::DegenerateLabels: return 3;
    default: return 2;
  }
}

}  // namespace posenorm
