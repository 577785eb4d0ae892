#pragma once

// Synthetic "bird" dataset: an articulated landmark template per pose
// cluster, placed by a random similarity, rendered as soft shapes with a
// class-coded striped patch at the breast landmark.

#include <posenorm/dataset.hpp>
#include <posenorm/geometry.hpp>
#include <posenorm/imaging.hpp>
#include <posenorm/parallel.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace posenorm {

inline constexpr std::array<std::string_view, 15> kSyntheticPartNames = {
    "back",     "beak", "belly", "breast",   "crown",     "forehead",   "left_eye", "left_leg",
    "left_wing", "nape", "right_eye", "right_leg", "right_wing", "tail", "throat"};

// Landmark template in the bird frame (pixels at scale 1, head to the right).
inline constexpr std::array<Point2, 15> kSyntheticTemplate = {{
    {0, -12}, {38, -18}, {-2, 12}, {12, 8},   {27, -27}, {33, -23}, {29, -20}, {-4, 28},
    {-6, -4}, {19, -22}, {27, -16}, {6, 28},  {-12, 2},  {-36, 0},  {23, -7},
}};

inline constexpr std::size_t kSyntheticTexturePart = 3;  // breast

struct SyntheticConfig {
  std::size_t n_classes = 5;
  std::size_t images_per_class = 40;
  std::size_t parts = 15;  // K, first K template landmarks
  int image_size = 128;
  std::size_t pose_clusters = 1;
  double noise_sigma = 2.0;       // keypoint noise, pixels
  double occlusion = 0.2;         // probability a keypoint is marked invisible
  double rotation_range = M_PI / 2.0;  // poses rotate uniformly in [-range, range]
  double scale_min = 0.8;
  double scale_max = 1.25;
  double train_fraction = 0.5;
  double pixel_noise = 0.02;
  bool render = true;
  std::uint64_t rng_seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (parts < 5 || parts > kSyntheticTemplate.size()) fail(ErrorKind::InvalidArgument, "synthetic K must be in [5, 15]");
    if (n_classes < 1 || images_per_class < 1 || pose_clusters < 1) {
      fail(ErrorKind::InvalidArgument, "synthetic counts must be positive");
    }
    if (!(noise_sigma >= 0.0)) fail(ErrorKind::InvalidArgument, "noise sigma must be >= 0");
    if (!(occlusion >= 0.0 && occlusion < 1.0)) fail(ErrorKind::InvalidArgument, "occlusion must be in [0, 1)");
    if (!(scale_min > 0.0 && scale_max >= scale_min)) fail(ErrorKind::InvalidArgument, "bad scale range");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail(ErrorKind::InvalidArgument, "train fraction must be in (0, 1)");
    if (image_size < 16) fail(ErrorKind::InvalidArgument, "image size must be >= 16");
  }
};

struct SyntheticData {
  Dataset dataset;
  std::vector<ImageRaster> images;      // empty when render = false
  std::vector<int> pose_cluster;
  std::vector<Warp> poses;              // template frame -> image
  std::vector<KeypointSet> true_keypoints;  // noiseless, all visible
};

// Articulated template of one pose cluster: the head turns up, the wings
// lift, the tail swings and the legs tuck progressively with the cluster
// index, plus a fixed small per-cluster displacement of every landmark so no
// landmark subset is rigid across clusters.
inline std::vector<Point2> articulated_template(std::size_t pose_clusters, std::size_t cluster) {
  const double t = pose_clusters > 1 ? static_cast<double>(cluster) / (pose_clusters - 1) : 0.0;
  auto rotate_about = [](Point2 p, Point2 c, double a) {
    const double dx = p.x - c.x, dy = p.y - c.y;
    return Point2{c.x + std::cos(a) * dx - std::sin(a) * dy, c.y + std::sin(a) * dx + std::cos(a) * dy};
  };
  std::vector<Point2> pts(kSyntheticTemplate.begin(), kSyntheticTemplate.end());
  for (std::size_t j : {1, 4, 5, 6, 9, 10, 14}) pts[j] = rotate_about(pts[j], {16, -10}, -0.9 * t);
  for (std::size_t j : {8, 12}) pts[j].y -= 26.0 * t;
  pts[13] = rotate_about(pts[13], {-20, 0}, 0.6 * t);
  for (std::size_t j : {7, 11}) pts[j].x += 10.0 * t;
  if (pose_clusters > 1) {
    std::mt19937_64 rng(0x5eedULL + cluster);
    std::normal_distribution<double> jitter(0.0, 2.5);
    for (auto& p : pts) {
      p.x += jitter(rng);
      p.y += jitter(rng);
    }
  }
  return pts;
}

// The first K landmarks of a cluster's template.
inline std::vector<Point2> synthetic_template(const SyntheticConfig& cfg, std::size_t cluster) {
  auto pts = articulated_template(cfg.pose_clusters, cluster);
  pts.resize(cfg.parts);
  return pts;
}

namespace detail {

inline double smoothstep_edge(double signed_distance, double width) {
  return 1.0 / (1.0 + std::exp(signed_distance / width));
}

// `tmpl` is the full 15-landmark template, whatever K is.
inline ImageRaster render_bird(const SyntheticConfig& cfg, const std::vector<Point2>& tmpl, const Warp& pose,
                               std::size_t label, std::uint64_t seed) {
  const int n = cfg.image_size;
  ImageRaster img(n, n, 1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  const double bg_phase_x = phase(rng), bg_phase_y = phase(rng);
  std::normal_distribution<double> noise(0.0, cfg.pixel_noise > 0.0 ? cfg.pixel_noise : 1.0);

  const Warp inv = invert_warp(pose);
  const double scale = std::sqrt(std::abs(pose.linear().determinant()));
  Point2 head{0, 0};
  for (std::size_t j : {4, 6, 10, 14}) {
    head.x += tmpl[j].x / 4.0;
    head.y += tmpl[j].y / 4.0;
  }
  const Point2 breast = tmpl[kSyntheticTexturePart];
  const double stripe_angle = M_PI * static_cast<double>(label) / static_cast<double>(cfg.n_classes);
  const double su = std::cos(stripe_angle), sv = std::sin(stripe_angle);
  constexpr double kStripePeriod = 6.0, kPatchRadius = 10.0;

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const Point2 b = apply_warp(inv, {static_cast<double>(x), static_cast<double>(y)});
      const double edge = 1.2 / scale;  // about one image pixel in bird units
      double v = 0.35 + 0.05 * std::sin(x / 9.0 + bg_phase_x) * std::sin(y / 11.0 + bg_phase_y);
      // Body ellipse.
      const double ex = (b.x + 2.0) / 28.0, ey = b.y / 17.0;
      const double body = smoothstep_edge((std::sqrt(ex * ex + ey * ey) - 1.0) * 20.0, edge);
      v += 0.22 * body;
      const double head_in = smoothstep_edge(std::hypot(b.x - head.x, b.y - head.y) - 10.0, edge);
      v += 0.3 * head_in * (1.0 - body) + 0.08 * head_in * body;
      for (const auto& p : tmpl) v += 0.08 * std::exp(-((b.x - p.x) * (b.x - p.x) + (b.y - p.y) * (b.y - p.y)) / 8.0);
      // Class patch: stripes fixed in the bird frame.
      const double dx = b.x - breast.x, dy = b.y - breast.y;
      const double patch = smoothstep_edge(std::hypot(dx, dy) - kPatchRadius, edge);
      if (patch > 1e-6) {
        const double stripes = 0.5 + 0.4 * std::sin(2.0 * M_PI * (dx * su + dy * sv) / kStripePeriod);
        v = (1.0 - patch) * v + patch * stripes;
      }
      if (cfg.pixel_noise > 0.0) v += noise(rng);
      img.at(x, y) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_classes * cfg.images_per_class;
  SyntheticData out;
  Dataset& ds = out.dataset;
  ds.part_count = cfg.parts;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) ds.class_names.push_back("class" + std::to_string(c));
  for (std::size_t j = 0; j < cfg.parts; ++j) ds.part_names.emplace_back(kSyntheticPartNames[j]);

  std::vector<std::vector<Point2>> templates;
  for (std::size_t c = 0; c < cfg.pose_clusters; ++c) templates.push_back(articulated_template(cfg.pose_clusters, c));

  std::mt19937_64 rng(cfg.rng_seed);
  std::uniform_real_distribution<double> angle(-cfg.rotation_range, cfg.rotation_range);
  std::uniform_real_distribution<double> log_scale(std::log(cfg.scale_min), std::log(cfg.scale_max));
  std::uniform_real_distribution<double> shift(-0.08 * cfg.image_size, 0.08 * cfg.image_size);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution occluded(cfg.occlusion);
  std::vector<std::uint64_t> render_seeds(n);

  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    std::vector<std::size_t> order(cfg.images_per_class);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.train_fraction * static_cast<double>(cfg.images_per_class))));
    std::vector<char> is_train(cfg.images_per_class, 0);
    for (std::size_t i = 0; i < std::min(n_train, order.size()); ++i) is_train[order[i]] = 1;

    for (std::size_t i = 0; i < cfg.images_per_class; ++i) {
      const std::size_t cluster = i % cfg.pose_clusters;
      const double center = (cfg.image_size - 1) / 2.0;
      const Warp pose = Warp::from_similarity(std::exp(log_scale(rng)), angle(rng), center + shift(rng),
                                              center + shift(rng));
      KeypointSet truth(cfg.parts), detected(cfg.parts);
      for (std::size_t j = 0; j < cfg.parts; ++j) {
        const Point2 p = apply_warp(pose, templates[cluster][j]);
        truth.set(j, p, true);
        const bool hidden = occluded(rng);
        const double nx = noise(rng), ny = noise(rng);
        detected.set(j, {p.x + cfg.noise_sigma * nx, p.y + cfg.noise_sigma * ny}, !hidden);
      }
      const std::string id = "s" + std::to_string(ds.images.size());
      ds.images.push_back({id, id + ".png", cfg.image_size, cfg.image_size});
      ds.keypoints.push_back(std::move(detected));
      ds.labels.push_back(static_cast<int>(c));
      ds.split.push_back(is_train[i] ? Split::Train : Split::Test);
      out.pose_cluster.push_back(static_cast<int>(cluster));
      out.poses.push_back(pose);
      out.true_keypoints.push_back(std::move(truth));
      render_seeds[ds.images.size() - 1] = rng();
    }
  }

  if (cfg.render) {
    out.images.resize(n);
    parallel_for(n, cfg.workers, [&](std::size_t i) {
      out.images[i] = detail::render_bird(cfg, templates[out.pose_cluster[i]], out.poses[i],
                                          static_cast<std::size_t>(ds.labels[i]), render_seeds[i]);
    });
  }
  ds.validate();
  return out;
}

}  // namespace posenorm
