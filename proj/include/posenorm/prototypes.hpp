#pragma once

// Pose prototypes: candidate construction around anchor keypoints, keypoint
// alignment costs, prototype selection through facility location, and the
// fixed region schemes used as baselines.

#include <posenorm/dataset.hpp>
#include <posenorm/error.hpp>
#include <posenorm/facility_location.hpp>
#include <posenorm/geometry.hpp>
#include <posenorm/parallel.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace posenorm {

struct Prototype {
  std::string ref_image;
  Box box;
  std::vector<int> anchor_parts;  // ascending
  KeypointSet normalized_ref_keypoints;

  friend bool operator==(const Prototype&, const Prototype&) = default;
};

struct PrototypeSet {
  double canonical_size = 224.0;
  WarpFamily family = WarpFamily::Similarity;
  std::vector<Prototype> prototypes;

  std::size_t size() const noexcept { return prototypes.size(); }
  friend bool operator==(const PrototypeSet&, const PrototypeSet&) = default;
};

struct PrototypeLearnConfig {
  double lambda = 64.0;  // canonical pixels^2 (8 px)
  std::size_t neighbors = 5;
  double box_expansion = 0.5;  // fraction of the tight box, per side
  double canonical_size = 224.0;
  WarpFamily family = WarpFamily::Similarity;
  std::size_t anchor_subsample = 0;  // 0 keeps every candidate
  std::uint64_t rng_seed = 0;
  double min_box_side = 8.0;
  std::size_t workers = 1;

  void validate() const {
    if (!(lambda > 0.0)) fail(ErrorKind::InvalidArgument, "lambda must be positive");
    if (neighbors < min_points(family)) {
      fail(ErrorKind::InvalidArgument, "neighbors (" + std::to_string(neighbors) + ") below the " +
                                           std::string(to_string(family)) + " minimum of " +
                                           std::to_string(min_points(family)));
    }
    if (!(box_expansion >= 0.0)) fail(ErrorKind::InvalidArgument, "box expansion must be >= 0");
    if (!(canonical_size > 0.0)) fail(ErrorKind::InvalidArgument, "canonical size must be positive");
    if (!(min_box_side > 0.0)) fail(ErrorKind::InvalidArgument, "minimum box side must be positive");
  }
};

struct CandidateAnchor {
  std::size_t image = 0;  // dataset index
  int part = 0;

  friend bool operator==(const CandidateAnchor&, const CandidateAnchor&) = default;
};

// Square region around `points`: the tight box grown by `expansion` of its
// width/height on each side, squared up around its center (a similarity
// cannot absorb an anisotropic box), given at least `min_side`, then shifted
// to lie inside the image when the image size is known and large enough.
inline Box region_box(std::span<const Point2> points, int image_width, int image_height, double expansion,
                      double min_side) {
  if (points.empty()) fail(ErrorKind::InvalidArgument, "region box needs at least one point");
  double x0 = points[0].x, x1 = points[0].x, y0 = points[0].y, y1 = points[0].y;
  for (auto p : points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double w = x1 - x0, h = y1 - y0;
  x0 -= expansion * w;
  x1 += expansion * w;
  y0 -= expansion * h;
  y1 += expansion * h;
  const double side = std::max({x1 - x0, y1 - y0, min_side});
  Box box{(x0 + x1 - side) / 2.0, (y0 + y1 - side) / 2.0, side, side};

  auto fit_axis = [side](double origin, int extent) {
    if (extent <= 0) return origin;
    if (side > extent) return (extent - side) / 2.0;
    return std::clamp(origin, 0.0, extent - side);
  };
  box.x_min = fit_axis(box.x_min, image_width);
  box.y_min = fit_axis(box.y_min, image_height);
  return box;
}

// Prototype anchored on an explicit part set of one dataset image.
inline Prototype make_prototype(const Dataset& ds, std::size_t image, std::vector<int> parts,
                                const PrototypeLearnConfig& cfg) {
  const KeypointSet& kps = ds.keypoints.at(image);
  std::sort(parts.begin(), parts.end());
  parts.erase(std::unique(parts.begin(), parts.end()), parts.end());
  std::vector<Point2> pts;
  for (int p : parts) {
    if (p < 0 || static_cast<std::size_t>(p) >= kps.size()) {
      fail(ErrorKind::UnknownPart, "part " + std::to_string(p) + " outside [0, " + std::to_string(kps.size()) + ")");
    }
    if (!kps[p].visible) {
      fail(ErrorKind::TooFewVisible, "part " + std::to_string(p) + " is not visible in image " + ds.images[image].id);
    }
    pts.push_back(kps[p].location);
  }
  const Box box = region_box(pts, ds.images[image].width, ds.images[image].height, cfg.box_expansion,
                             cfg.min_box_side);
  return Prototype{ds.images[image].id, box, std::move(parts), normalize_keypoints(kps, box, cfg.canonical_size)};
}

// Anchor parts are the M visible keypoints nearest to the anchor (itself
// included); distance ties go to the lower part index.
inline std::vector<int> nearest_visible_parts(const KeypointSet& kps, int anchor, std::size_t m) {
  const Point2 center = kps[anchor].location;
  std::vector<std::pair<double, int>> order;
  for (const auto& k : kps.points())
    if (k.visible) order.emplace_back(squared_distance(k.location, center), k.part_index);
  if (order.size() < m) {
    fail(ErrorKind::TooFewVisible, std::to_string(order.size()) + " visible keypoints, need " + std::to_string(m));
  }
  std::sort(order.begin(), order.end());
  std::vector<int> parts;
  for (std::size_t i = 0; i < m; ++i) parts.push_back(order[i].second);
  std::sort(parts.begin(), parts.end());
  return parts;
}

inline Prototype build_candidate(const CandidateAnchor& anchor, const Dataset& ds, const PrototypeLearnConfig& cfg) {
  const KeypointSet& kps = ds.keypoints.at(anchor.image);
  if (anchor.part < 0 || static_cast<std::size_t>(anchor.part) >= kps.size()) {
    fail(ErrorKind::UnknownPart, "anchor part " + std::to_string(anchor.part));
  }
  if (!kps[anchor.part].visible) {
    fail(ErrorKind::InvalidArgument, "anchor keypoint is not visible in image " + ds.images[anchor.image].id);
  }
  return make_prototype(ds, anchor.image, nearest_visible_parts(kps, anchor.part, cfg.neighbors), cfg);
}

inline std::optional<WarpFitResult> fit_region_warp(const KeypointSet& detected, const Prototype& proto,
                                                    WarpFamily family) {
  return fit_region_warp(detected, proto.anchor_parts, proto.normalized_ref_keypoints, family);
}

// Squared alignment error (canonical pixels^2) of every keypoint of
// `detected` under the prototype's best warp. Entries are +inf when the
// keypoint is invisible in either image or the warp cannot be fit.
inline std::vector<double> alignment_costs(const KeypointSet& detected, const Prototype& proto, WarpFamily family) {
  std::vector<double> costs(detected.size(), kInfiniteCost);
  std::optional<WarpFitResult> fit;
  try {
    fit = fit_region_warp(detected, proto, family);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DegenerateConfiguration) throw;
  }
  if (!fit) return costs;
  const KeypointSet& ref = proto.normalized_ref_keypoints;
  for (std::size_t j = 0; j < detected.size(); ++j) {
    if (!detected[j].visible || j >= ref.size() || !ref[j].visible) continue;
    costs[j] = squared_distance(ref[j].location, apply_warp(fit->warp, detected[j].location));
  }
  return costs;
}

inline double connection_cost(const Dataset& ds, std::size_t image, int part, const Prototype& facility,
                              WarpFamily family) {
  return alignment_costs(ds.keypoints.at(image), facility, family).at(static_cast<std::size_t>(part));
}

// Candidate anchors over the training split. With a cap, anchors are drawn
// per part index (uniformly over images) in round-robin so every part keeps
// a similar share.
inline std::vector<CandidateAnchor> candidate_anchors(const Dataset& ds, const PrototypeLearnConfig& cfg) {
  std::vector<std::vector<CandidateAnchor>> by_part(ds.part_count);
  for (std::size_t i : ds.indices(Split::Train)) {
    const auto& kps = ds.keypoints[i];
    if (kps.visible_count() < cfg.neighbors) continue;
    for (const auto& k : kps.points())
      if (k.visible) by_part[k.part_index].push_back({i, k.part_index});
  }
  std::vector<CandidateAnchor> out;
  std::size_t total = 0;
  for (const auto& v : by_part) total += v.size();
  if (cfg.anchor_subsample == 0 || cfg.anchor_subsample >= total) {
    for (const auto& v : by_part) out.insert(out.end(), v.begin(), v.end());
  } else {
    std::mt19937_64 rng(cfg.rng_seed);
    for (auto& v : by_part) std::shuffle(v.begin(), v.end(), rng);
    std::vector<std::size_t> taken(by_part.size(), 0);
    while (out.size() < cfg.anchor_subsample) {
      for (std::size_t k = 0; k < by_part.size() && out.size() < cfg.anchor_subsample; ++k)
        if (taken[k] < by_part[k].size()) out.push_back(by_part[k][taken[k]++]);
    }
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.image != b.image ? a.image < b.image : a.part < b.part; });
  return out;
}

struct LearnResult {
  PrototypeSet prototypes;
  double objective = 0.0;  // lambda * P + summed alignment error / (n * K)
  double lambda = 0.0;
  std::size_t candidate_count = 0;
  std::vector<CandidateAnchor> selected_anchors;     // parallel to prototypes
  std::vector<std::size_t> assignment_counts;        // parallel to prototypes
  // One entry per city (visible training keypoint).
  std::vector<std::size_t> city_image;
  std::vector<int> city_part;
  std::vector<std::size_t> city_prototype;
  std::vector<double> city_cost;
};

inline LearnResult learn_prototypes(const Dataset& ds, const PrototypeLearnConfig& cfg) {
  cfg.validate();
  const auto train = ds.indices(Split::Train);
  for (std::size_t t : train) {
    if (ds.keypoints[t].visible_count() == 0) {
      fail(ErrorKind::InvalidArgument, "training image " + ds.images[t].id + " has no visible keypoints");
    }
  }

  LearnResult result;
  result.lambda = cfg.lambda;
  for (std::size_t t : train) {
    for (const auto& k : ds.keypoints[t].points()) {
      if (!k.visible) continue;
      result.city_image.push_back(t);
      result.city_part.push_back(k.part_index);
    }
  }
  const std::size_t n_cities = result.city_image.size();
  // City index of (image, part); -1 when the keypoint is not a city.
  std::vector<std::vector<long>> city_of(ds.size(), std::vector<long>(ds.part_count, -1));
  for (std::size_t c = 0; c < n_cities; ++c) city_of[result.city_image[c]][result.city_part[c]] = static_cast<long>(c);

  const auto anchors = candidate_anchors(ds, cfg);
  result.candidate_count = anchors.size();
  if (anchors.empty()) fail(ErrorKind::Infeasible, "no candidate prototypes (too few visible keypoints)");

  std::vector<Prototype> candidates(anchors.size());
  std::vector<std::vector<FacilityLocationInstance::Link>> links(anchors.size());
  parallel_for(anchors.size(), cfg.workers, [&](std::size_t f) {
    candidates[f] = build_candidate(anchors[f], ds, cfg);
    for (std::size_t t : train) {
      const auto costs = alignment_costs(ds.keypoints[t], candidates[f], cfg.family);
      for (std::size_t j = 0; j < costs.size(); ++j)
        if (std::isfinite(costs[j])) links[f].push_back({static_cast<std::size_t>(city_of[t][j]), costs[j]});
    }
  });

  // The objective averages alignment error over all n*K keypoint slots, which
  // is the same as charging lambda * n*K per facility against summed errors.
  const double slots = static_cast<double>(train.size() * ds.part_count);
  FacilityLocationInstance inst(cfg.lambda * slots, n_cities, anchors.size());
  for (std::size_t f = 0; f < anchors.size(); ++f)
    for (const auto& l : links[f]) inst.set_cost(l.city, f, l.cost);
  std::vector<std::int64_t> city_ids(n_cities), facility_ids(anchors.size());
  for (std::size_t c = 0; c < n_cities; ++c)
    city_ids[c] = static_cast<std::int64_t>(result.city_image[c] * ds.part_count + result.city_part[c]);
  for (std::size_t f = 0; f < anchors.size(); ++f)
    facility_ids[f] = static_cast<std::int64_t>(anchors[f].image * ds.part_count + anchors[f].part);
  inst.set_ids(std::move(city_ids), std::move(facility_ids));

  const FacilitySolution sol = greedy_facility_location(inst);

  std::vector<std::size_t> count(anchors.size(), 0);
  for (std::size_t f : sol.assignment) ++count[f];
  std::vector<std::size_t> order = sol.open_facilities;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return count[a] > count[b]; });
  std::vector<std::size_t> rank(anchors.size(), 0);
  result.prototypes.canonical_size = cfg.canonical_size;
  result.prototypes.family = cfg.family;
  for (std::size_t r = 0; r < order.size(); ++r) {
    rank[order[r]] = r;
    result.prototypes.prototypes.push_back(candidates[order[r]]);
    result.selected_anchors.push_back(anchors[order[r]]);
    result.assignment_counts.push_back(count[order[r]]);
  }
  result.city_prototype.resize(n_cities);
  for (std::size_t c = 0; c < n_cities; ++c) result.city_prototype[c] = rank[sol.assignment[c]];
  result.city_cost = sol.assignment_cost;
  result.objective = sol.total_cost / slots;
  return result;
}

// Fixed region schemes -------------------------------------------------------

// Two hand-chosen regions (head, body) on one reference image.
struct HeadBodyScheme {
  std::vector<int> head_parts;
  std::vector<int> body_parts;
  std::optional<std::size_t> reference_image;  // dataset index; default: best-covered training image
};

// `count` regions, each anchored on a random visible keypoint pair.
struct RandPairsScheme {
  std::size_t count = 6;
  std::uint64_t seed = 0;
};

// One translation-aligned region per part.
struct CubKeypointsScheme {};

using BaselineScheme = std::variant<HeadBodyScheme, RandPairsScheme, CubKeypointsScheme>;

inline PrototypeSet baseline_regions(const BaselineScheme& scheme, const Dataset& ds, const PrototypeLearnConfig& cfg) {
  const auto train = ds.indices(Split::Train);
  if (train.empty()) fail(ErrorKind::InvalidArgument, "baseline regions need training images");
  PrototypeSet out;
  out.canonical_size = cfg.canonical_size;
  out.family = cfg.family;

  auto check_parts = [&](const std::vector<int>& parts) {
    for (int p : parts) {
      if (p < 0 || static_cast<std::size_t>(p) >= ds.part_count) {
        fail(ErrorKind::UnknownPart, "part " + std::to_string(p) + " outside [0, " + std::to_string(ds.part_count) + ")");
      }
    }
  };

  if (const auto* hb = std::get_if<HeadBodyScheme>(&scheme)) {
    check_parts(hb->head_parts);
    check_parts(hb->body_parts);
    std::size_t ref = train.front();
    if (hb->reference_image) {
      ref = *hb->reference_image;
    } else {
      std::size_t best = 0;
      for (std::size_t i : train) {
        std::size_t visible = 0;
        for (int p : hb->head_parts) visible += ds.keypoints[i][p].visible;
        for (int p : hb->body_parts) visible += ds.keypoints[i][p].visible;
        if (visible > best) {
          best = visible;
          ref = i;
        }
      }
    }
    for (const auto* group : {&hb->head_parts, &hb->body_parts}) {
      std::vector<int> parts;
      for (int p : *group)
        if (ds.keypoints[ref][p].visible) parts.push_back(p);
      if (parts.size() < min_points(cfg.family)) {
        fail(ErrorKind::TooFewVisible, "reference image " + ds.images[ref].id + " shows too few parts of a group");
      }
      out.prototypes.push_back(make_prototype(ds, ref, parts, cfg));
    }
  } else if (const auto* rp = std::get_if<RandPairsScheme>(&scheme)) {
    std::vector<std::size_t> eligible;
    for (std::size_t i : train)
      if (ds.keypoints[i].visible_count() >= 2) eligible.push_back(i);
    if (eligible.empty()) fail(ErrorKind::TooFewVisible, "no training image shows two keypoints");
    std::mt19937_64 rng(rp->seed);
    for (std::size_t n = 0; n < rp->count; ++n) {
      const std::size_t img = eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)];
      std::vector<int> visible;
      for (const auto& k : ds.keypoints[img].points())
        if (k.visible) visible.push_back(k.part_index);
      std::shuffle(visible.begin(), visible.end(), rng);
      out.prototypes.push_back(make_prototype(ds, img, {visible[0], visible[1]}, cfg));
    }
  } else {
    out.family = WarpFamily::Translation;
    for (std::size_t k = 0; k < ds.part_count; ++k) {
      const auto it = std::find_if(train.begin(), train.end(),
                                   [&](std::size_t i) { return ds.keypoints[i][k].visible; });
      if (it == train.end()) continue;
      out.prototypes.push_back(make_prototype(ds, *it, {static_cast<int>(k)}, cfg));
    }
  }
  return out;
}

// Serialization ------------------------------------------------------------

inline constexpr std::string_view kPrototypeSetVersion = "pnp1";

inline nlohmann::ordered_json to_json(const PrototypeSet& set) {
  nlohmann::ordered_json j;
  j["version"] = kPrototypeSetVersion;
  j["canonical_size"] = set.canonical_size;
  j["family"] = to_string(set.family);
  auto protos = nlohmann::ordered_json::array();
  for (const auto& p : set.prototypes) {
    nlohmann::ordered_json o;
    o["ref_image"] = p.ref_image;
    o["box"] = {p.box.x_min, p.box.y_min, p.box.width, p.box.height};
    o["anchor_parts"] = p.anchor_parts;
    auto kps = nlohmann::ordered_json::array();
    for (const auto& k : p.normalized_ref_keypoints.points()) kps.push_back({k.location.x, k.location.y, k.visible ? 1 : 0});
    o["normalized_ref_keypoints"] = std::move(kps);
    protos.push_back(std::move(o));
  }
  j["prototypes"] = std::move(protos);
  return j;
}

inline PrototypeSet prototype_set_from_json(const nlohmann::json& j) {
  try {
    const std::string version = j.value("version", std::string("<none>"));
    if (version != kPrototypeSetVersion) {
      fail(ErrorKind::FormatError,
           "prototype file: expected version " + std::string(kPrototypeSetVersion) + ", found " + version);
    }
    PrototypeSet set;
    set.canonical_size = j.at("canonical_size").get<double>();
    set.family = parse_warp_family(j.at("family").get<std::string>());
    for (const auto& o : j.at("prototypes")) {
      Prototype p;
      p.ref_image = o.at("ref_image").get<std::string>();
      const auto& b = o.at("box");
      p.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
      p.anchor_parts = o.at("anchor_parts").get<std::vector<int>>();
      const auto& kps = o.at("normalized_ref_keypoints");
      KeypointSet set_k(kps.size());
      for (std::size_t k = 0; k < kps.size(); ++k)
        set_k.set(k, {kps[k].at(0).get<double>(), kps[k].at(1).get<double>()}, kps[k].at(2).get<int>() != 0);
      p.normalized_ref_keypoints = std::move(set_k);
      set.prototypes.push_back(std::move(p));
    }
    return set;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, std::string("prototype file: ") + e.what());
  }
}

}  // namespace posenorm
