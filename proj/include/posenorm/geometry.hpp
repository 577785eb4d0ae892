#pragma once

// Keypoints, boxes and closed-form warp estimation between keypoint sets.
//
// A warp maps detected-image pixel coordinates into a prototype's canonical
// region frame: W(y) = A*y + t, stored uniformly as a 2x3 matrix [A | t].

#include <posenorm/error.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace posenorm {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double squared_distance(Point2 a, Point2 b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

inline bool is_finite(Point2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

struct Keypoint {
  int part_index = 0;
  Point2 location;
  bool visible = false;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

// Exactly K keypoint slots; slot j always holds part j.
class KeypointSet {
 public:
  KeypointSet() = default;

  explicit KeypointSet(std::size_t part_count) : points_(part_count) {
    for (std::size_t j = 0; j < part_count; ++j) points_[j].part_index = static_cast<int>(j);
  }

  explicit KeypointSet(std::vector<Keypoint> points) : points_(std::move(points)) {
    for (std::size_t j = 0; j < points_.size(); ++j) {
      if (points_[j].part_index != static_cast<int>(j)) {
        fail(ErrorKind::InvalidArgument,
             "keypoint slot " + std::to_string(j) + " holds part " +
                 std::to_string(points_[j].part_index));
      }
      if (points_[j].visible && !is_finite(points_[j].location)) {
        fail(ErrorKind::InvalidArgument,
             "visible keypoint " + std::to_string(j) + " has a non-finite location");
      }
    }
  }

  std::size_t size() const noexcept { return points_.size(); }
  const Keypoint& operator[](std::size_t j) const { return points_[j]; }
  const std::vector<Keypoint>& points() const noexcept { return points_; }

  void set(std::size_t j, Point2 location, bool visible) {
    points_.at(j).location = location;
    points_[j].visible = visible;
  }

  std::size_t visible_count() const {
    return static_cast<std::size_t>(
        std::count_if(points_.begin(), points_.end(), [](const Keypoint& k) { return k.visible; }));
  }

  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;

 private:
  std::vector<Keypoint> points_;
};

struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double width = 1.0;
  double height = 1.0;

  double x_max() const { return x_min + width; }
  double y_max() const { return y_min + height; }
  bool valid() const { return width > 0.0 && height > 0.0; }
  bool contains(Point2 p, double tol = 1e-9) const {
    return p.x >= x_min - tol && p.x <= x_max() + tol && p.y >= y_min - tol &&
           p.y <= y_max() + tol;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

enum class WarpFamily { Translation, Similarity, Affine };

// Minimum number of correspondences for which each family is well defined.
constexpr std::size_t min_points(WarpFamily family) noexcept {
  switch (family) {
    case WarpFamily::Translation: return 1;
    case WarpFamily::Similarity: return 2;
    case WarpFamily::Affine: return 3;
  }
  return 3;
}

constexpr std::string_view to_string(WarpFamily family) noexcept {
  switch (family) {
    case WarpFamily::Translation: return "translation";
    case WarpFamily::Similarity: return "similarity";
    case WarpFamily::Affine: return "affine";
  }
  return "affine";
}

inline WarpFamily parse_warp_family(std::string_view name) {
  if (name == "translation") return WarpFamily::Translation;
  if (name == "similarity") return WarpFamily::Similarity;
  if (name == "affine") return WarpFamily::Affine;
  fail(ErrorKind::InvalidArgument, "unknown warp family '" + std::string(name) + "'");
}

using Matrix23 = Eigen::Matrix<double, 2, 3>;

struct Warp {
  WarpFamily family = WarpFamily::Translation;
  Matrix23 matrix = Matrix23::Identity();

  Eigen::Matrix2d linear() const { return matrix.leftCols<2>(); }
  Eigen::Vector2d translation() const { return matrix.col(2); }

  static Warp identity(WarpFamily family = WarpFamily::Translation) { return Warp{family, Matrix23::Identity()}; }

  static Warp from_translation(double tx, double ty) {
    Warp w = identity(WarpFamily::Translation);
    w.matrix(0, 2) = tx;
    w.matrix(1, 2) = ty;
    return w;
  }

  static Warp from_similarity(double scale, double angle_rad, double tx, double ty) {
    Warp w{WarpFamily::Similarity, Matrix23::Zero()};
    const double c = scale * std::cos(angle_rad);
    const double s = scale * std::sin(angle_rad);
    w.matrix << c, -s, tx, s, c, ty;
    return w;
  }

  static Warp from_affine(const Matrix23& m) { return Warp{WarpFamily::Affine, m}; }
};

inline Point2 apply_warp(const Warp& w, Point2 p) {
  const auto& m = w.matrix;
  return {m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2), m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)};
}

// Composition: (outer ∘ inner)(p) = outer(inner(p)). The result's family is
// the more general of the two.
inline Warp compose(const Warp& outer, const Warp& inner) {
  Warp out;
  out.family = std::max(outer.family, inner.family);
  out.matrix.leftCols<2>() = outer.linear() * inner.linear();
  out.matrix.col(2) = outer.linear() * inner.translation() + outer.translation();
  return out;
}

inline constexpr double kSingularWarpDeterminant = 1e-12;

inline Warp invert_warp(const Warp& w) {
  const Eigen::Matrix2d a = w.linear();
  const double det = a.determinant();
  if (!(std::abs(det) >= kSingularWarpDeterminant)) {
    fail(ErrorKind::SingularWarp, "warp determinant " + std::to_string(det) + " is not invertible");
  }
  const Eigen::Matrix2d inv = a.inverse();
  Warp out{w.family, Matrix23::Zero()};
  out.matrix.leftCols<2>() = inv;
  out.matrix.col(2) = -inv * w.translation();
  return out;
}

// Maps every visible keypoint into the box frame scaled to canonical pixels:
// ((x - x_min) / width, (y - y_min) / height) * canonical_size.
inline KeypointSet normalize_keypoints(const KeypointSet& kps, const Box& box, double canonical_size) {
  if (!box.valid()) fail(ErrorKind::InvalidArgument, "normalization box must have positive extent");
  if (!(canonical_size > 0.0)) fail(ErrorKind::InvalidArgument, "canonical size must be positive");
  std::vector<Keypoint> out = kps.points();
  for (auto& k : out) {
    if (!k.visible) continue;
    k.location = {(k.location.x - box.x_min) / box.width * canonical_size,
                  (k.location.y - box.y_min) / box.height * canonical_size};
  }
  return KeypointSet(std::move(out));
}

// Closed-form SVD of a 2x2 matrix, C = U * diag(s0, s1) * V^T with s0 >= s1 >= 0.
struct Svd2 {
  Eigen::Matrix2d u;
  Eigen::Vector2d sigma;
  Eigen::Matrix2d v;
};

inline Eigen::Matrix2d rotation2(double angle) {
  Eigen::Matrix2d r;
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return r;
}

// Rotation-scale-rotation factorization: C = Rot(phi) * diag(q + r, q - r) * Rot(theta).
inline Svd2 svd2x2(const Eigen::Matrix2d& c) {
  const double e = (c(0, 0) + c(1, 1)) / 2.0;
  const double f = (c(0, 0) - c(1, 1)) / 2.0;
  const double g = (c(1, 0) + c(0, 1)) / 2.0;
  const double h = (c(1, 0) - c(0, 1)) / 2.0;
  const double q = std::hypot(e, h);
  const double r = std::hypot(f, g);
  const double a1 = std::atan2(g, f);
  const double a2 = std::atan2(h, e);
  const double theta = (a2 - a1) / 2.0;
  const double phi = (a2 + a1) / 2.0;

  Svd2 out;
  out.u = rotation2(phi);
  Eigen::Matrix2d vt = rotation2(theta);
  double s1 = q - r;
  if (s1 < 0.0) {
    s1 = -s1;
    vt.row(1) *= -1.0;
  }
  out.sigma = {q + r, s1};
  out.v = vt.transpose();
  return out;
}

namespace detail {

using Points2xN = Eigen::Matrix<double, 2, Eigen::Dynamic>;

inline Points2xN stack_points(std::span<const Point2> pts) {
  Points2xN m(2, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t j = 0; j < pts.size(); ++j) {
    m(0, static_cast<Eigen::Index>(j)) = pts[j].x;
    m(1, static_cast<Eigen::Index>(j)) = pts[j].y;
  }
  return m;
}

inline Warp estimate_translation(const Points2xN& src, const Points2xN& dst) {
  const Eigen::Vector2d t = dst.rowwise().mean() - src.rowwise().mean();
  return Warp::from_translation(t.x(), t.y());
}

inline Warp estimate_similarity(const Points2xN& src, const Points2xN& dst) {
  const Eigen::Vector2d mu_src = src.rowwise().mean();
  const Eigen::Vector2d mu_dst = dst.rowwise().mean();
  const Points2xN src_c = src.colwise() - mu_src;
  const Points2xN dst_c = dst.colwise() - mu_dst;

  const double spread = src_c.squaredNorm();
  const double magnitude = src.squaredNorm();
  if (!(spread > 1e-20 * std::max(1.0, magnitude))) {
    fail(ErrorKind::DegenerateConfiguration, "similarity source points are coincident");
  }

  const Eigen::Matrix2d cross = src_c * dst_c.transpose();
  const Svd2 svd = svd2x2(cross);
  const double reflect = (svd.v * svd.u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Eigen::Matrix2d rot = svd.v * Eigen::Vector2d(1.0, reflect).asDiagonal() * svd.u.transpose();
  const double scale = (dst_c.transpose() * rot * src_c).trace() / spread;
  if (!(scale > 0.0)) {
    fail(ErrorKind::DegenerateConfiguration, "similarity target points are coincident");
  }

  Warp w{WarpFamily::Similarity, Matrix23::Zero()};
  w.matrix.leftCols<2>() = scale * rot;
  w.matrix.col(2) = mu_dst - scale * rot * mu_src;
  return w;
}

inline constexpr double kAffineMaxCondition = 1e8;

// Solved on conditioned source coordinates (centered, mean distance sqrt(2));
// the least-squares solution is unchanged but the condition test no longer
// depends on where the points sit in the image.
inline Warp estimate_affine(const Points2xN& src, const Points2xN& dst) {
  const Eigen::Index n = src.cols();
  const Eigen::Vector2d mu = src.rowwise().mean();
  const Points2xN centered = src.colwise() - mu;
  const double mean_dist = centered.colwise().norm().mean();
  if (!(mean_dist > 0.0)) {
    fail(ErrorKind::DegenerateConfiguration, "affine source points are coincident");
  }
  const double k = std::sqrt(2.0) / mean_dist;

  Eigen::Matrix3d conditioner = Eigen::Matrix3d::Identity();
  conditioner(0, 0) = conditioner(1, 1) = k;
  conditioner(0, 2) = -k * mu.x();
  conditioner(1, 2) = -k * mu.y();

  Eigen::Matrix<double, 3, Eigen::Dynamic> homog(3, n);
  homog.topRows<2>() = k * centered;
  homog.row(2).setOnes();

  const Eigen::Matrix3d normal = homog * homog.transpose();
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(normal, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kAffineMaxCondition) {
    fail(ErrorKind::DegenerateConfiguration, "affine normal matrix is ill-conditioned (collinear points)");
  }

  const Matrix23 conditioned = (dst * homog.transpose()) * normal.inverse();
  return Warp::from_affine(conditioned * conditioner);
}

}  // namespace detail

// Least-squares warp within `family` mapping src[j] onto dst[j].
inline Warp estimate_warp(std::span<const Point2> src, std::span<const Point2> dst, WarpFamily family) {
  if (src.size() != dst.size()) {
    fail(ErrorKind::InvalidArgument, "source and target point counts differ");
  }
  if (src.size() < min_points(family)) {
    fail(ErrorKind::TooFewPoints, std::string(to_string(family)) + " needs at least " +
                                      std::to_string(min_points(family)) + " points, got " +
                                      std::to_string(src.size()));
  }
  for (std::size_t j = 0; j < src.size(); ++j) {
    if (!is_finite(src[j]) || !is_finite(dst[j])) {
      fail(ErrorKind::InvalidArgument, "non-finite correspondence at index " + std::to_string(j));
    }
  }
  const auto s = detail::stack_points(src);
  const auto d = detail::stack_points(dst);
  switch (family) {
    case WarpFamily::Translation: return detail::estimate_translation(s, d);
    case WarpFamily::Similarity: return detail::estimate_similarity(s, d);
    case WarpFamily::Affine: return detail::estimate_affine(s, d);
  }
  fail(ErrorKind::InvalidArgument, "unknown warp family");
}

inline double sum_squared_residual(const Warp& w, std::span<const Point2> src, std::span<const Point2> dst) {
  double total = 0.0;
  for (std::size_t j = 0; j < src.size(); ++j) total += squared_distance(dst[j], apply_warp(w, src[j]));
  return total;
}

struct WarpFitResult {
  Warp warp;
  std::vector<double> per_point_sq_error;  // canonical pixels^2, parallel to used_points
  std::vector<int> used_points;
};

// Aligns the detected keypoints of `anchor_parts` onto the prototype's
// normalized reference keypoints. Only parts visible in both sets are used;
// returns nullopt when fewer than min_points(family) remain (the caller
// zero-fills that region's features).
inline std::optional<WarpFitResult> fit_region_warp(const KeypointSet& detected,
                                                    std::span<const int> anchor_parts,
                                                    const KeypointSet& normalized_reference,
                                                    WarpFamily family) {
  std::vector<int> used;
  std::vector<Point2> src;
  std::vector<Point2> dst;
  for (int part : anchor_parts) {
    const auto j = static_cast<std::size_t>(part);
    if (j >= detected.size() || j >= normalized_reference.size()) {
      fail(ErrorKind::UnknownPart, "anchor part " + std::to_string(part) + " outside keypoint set");
    }
    if (!detected[j].visible || !normalized_reference[j].visible) continue;
    used.push_back(part);
    src.push_back(detected[j].location);
    dst.push_back(normalized_reference[j].location);
  }
  if (used.size() < min_points(family)) return std::nullopt;

  WarpFitResult result{estimate_warp(src, dst, family), {}, std::move(used)};
  result.per_point_sq_error.reserve(src.size());
  for (std::size_t j = 0; j < src.size(); ++j) {
    result.per_point_sq_error.push_back(squared_distance(dst[j], apply_warp(result.warp, src[j])));
  }
  return result;
}

}  // namespace posenorm
