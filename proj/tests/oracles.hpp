#pragma once

// Independent reference solvers used only by the tests. None of these call
// into the estimators they check.

#include <posenorm/geometry.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

namespace posenorm::oracle {

// Plain Nelder-Mead on R^N, run until the simplex collapses.
template <std::size_t N>
std::array<double, N> nelder_mead(const std::function<double(const std::array<double, N>&)>& f,
                                  std::array<double, N> start, double initial_step,
                                  int max_iter = 20000) {
  using P = std::array<double, N>;
  std::array<P, N + 1> simplex;
  std::array<double, N + 1> values;
  simplex[0] = start;
  for (std::size_t i = 0; i < N; ++i) {
    simplex[i + 1] = start;
    simplex[i + 1][i] += initial_step;
  }
  for (std::size_t i = 0; i <= N; ++i) values[i] = f(simplex[i]);

  auto lerp = [](const P& a, const P& b, double t) {
    P out;
    for (std::size_t i = 0; i < N; ++i) out[i] = a[i] + t * (b[i] - a[i]);
    return out;
  };

  for (int iter = 0; iter < max_iter; ++iter) {
    std::array<std::size_t, N + 1> order;
    for (std::size_t i = 0; i <= N; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    const std::size_t best = order[0], worst = order[N], second = order[N - 1];
    if (std::abs(values[worst] - values[best]) <= 1e-16 * (1.0 + std::abs(values[best]))) {
      double span = 0.0;
      for (std::size_t i = 0; i <= N; ++i)
        for (std::size_t d = 0; d < N; ++d) span = std::max(span, std::abs(simplex[i][d] - simplex[best][d]));
      if (span < 1e-13) break;
    }
    P centroid{};
    for (std::size_t i = 0; i <= N; ++i) {
      if (i == worst) continue;
      for (std::size_t d = 0; d < N; ++d) centroid[d] += simplex[i][d] / N;
    }
    const P reflected = lerp(centroid, simplex[worst], -1.0);
    const double fr = f(reflected);
    if (fr < values[best]) {
      const P expanded = lerp(centroid, simplex[worst], -2.0);
      const double fe = f(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const P contracted = lerp(centroid, simplex[worst], 0.5);
    const double fc = f(contracted);
    if (fc < values[worst]) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= N; ++i) {
      if (i == best) continue;
      simplex[i] = lerp(simplex[best], simplex[i], 0.5);
      values[i] = f(simplex[i]);
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i <= N; ++i)
    if (values[i] < values[best]) best = i;
  return simplex[best];
}

inline double similarity_residual(double log_s, double theta, double tx, double ty,
                                  const std::vector<Point2>& src, const std::vector<Point2>& dst) {
  const double s = std::exp(log_s);
  const double c = s * std::cos(theta), sn = s * std::sin(theta);
  double total = 0.0;
  for (std::size_t j = 0; j < src.size(); ++j) {
    const double x = c * src[j].x - sn * src[j].y + tx - dst[j].x;
    const double y = sn * src[j].x + c * src[j].y + ty - dst[j].y;
    total += x * x + y * y;
  }
  return total;
}

// Dense grid over (log s, theta) followed by Nelder-Mead over all four
// parameters from the best few grid cells. Returns the minimal residual found.
inline double numeric_similarity_residual(const std::vector<Point2>& src, const std::vector<Point2>& dst) {
  double sx = 0, sy = 0, dx = 0, dy = 0;
  for (std::size_t j = 0; j < src.size(); ++j) {
    sx += src[j].x;
    sy += src[j].y;
    dx += dst[j].x;
    dy += dst[j].y;
  }
  const double n = static_cast<double>(src.size());
  struct Cell {
    double value, log_s, theta;
  };
  std::vector<Cell> cells;
  for (int a = 0; a < 180; ++a) {
    const double theta = -std::numbers::pi + a * (2 * std::numbers::pi / 180);
    for (int b = 0; b <= 60; ++b) {
      const double log_s = -3.0 + b * 0.1;
      // Translation is fit crudely by matching centroids for the grid only.
      const double s = std::exp(log_s), c = s * std::cos(theta), sn = s * std::sin(theta);
      const double tx = (dx - (c * sx - sn * sy)) / n;
      const double ty = (dy - (sn * sx + c * sy)) / n;
      cells.push_back({similarity_residual(log_s, theta, tx, ty, src, dst), log_s, theta});
    }
  }
  std::partial_sort(cells.begin(), cells.begin() + 3, cells.end(),
                    [](const Cell& a, const Cell& b) { return a.value < b.value; });
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double s = std::exp(cells[i].log_s);
    const double c = s * std::cos(cells[i].theta), sn = s * std::sin(cells[i].theta);
    std::array<double, 4> start{cells[i].log_s, cells[i].theta, (dx - (c * sx - sn * sy)) / n,
                                (dy - (sn * sx + c * sy)) / n};
    auto f = [&](const std::array<double, 4>& p) { return similarity_residual(p[0], p[1], p[2], p[3], src, dst); };
    // Restart a few times so the simplex does not stall.
    for (int r = 0; r < 4; ++r) start = nelder_mead<4>(f, start, r == 0 ? 0.05 : 1e-3);
    best = std::min(best, f(start));
  }
  return best;
}

// Translation optimum via Nelder-Mead on (tx, ty) from the origin.
inline double numeric_translation_residual(const std::vector<Point2>& src, const std::vector<Point2>& dst) {
  auto f = [&](const std::array<double, 2>& t) {
    double total = 0.0;
    for (std::size_t j = 0; j < src.size(); ++j) {
      const double x = src[j].x + t[0] - dst[j].x, y = src[j].y + t[1] - dst[j].y;
      total += x * x + y * y;
    }
    return total;
  };
  std::array<double, 2> p{0.0, 0.0};
  for (int r = 0; r < 4; ++r) p = nelder_mead<2>(f, p, r == 0 ? 1.0 : 1e-3);
  return f(p);
}

// Affine optimum through a column-pivoted QR of the design matrix (no normal
// equations involved).
inline double qr_affine_residual(const std::vector<Point2>& src, const std::vector<Point2>& dst) {
  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::MatrixXd rhs(n, 2);
  for (Eigen::Index j = 0; j < n; ++j) {
    design.row(j) << src[j].x, src[j].y, 1.0;
    rhs.row(j) << dst[j].x, dst[j].y;
  }
  const Eigen::MatrixXd coef = design.colPivHouseholderQr().solve(rhs);
  return (design * coef - rhs).squaredNorm();
}

// Exhaustive facility subset enumeration; each city goes to its cheapest
// open facility. Returns +inf when no subset covers every city.
inline double brute_force_facility_location(double open_cost, const std::vector<std::vector<double>>& cost) {
  const std::size_t cities = cost.size();
  const std::size_t facilities = cities == 0 ? 0 : cost[0].size();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask < (std::size_t{1} << facilities); ++mask) {
    double total = open_cost * static_cast<double>(std::popcount(mask));
    for (std::size_t c = 0; c < cities && total < best; ++c) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t f = 0; f < facilities; ++f)
        if (mask & (std::size_t{1} << f)) m = std::min(m, cost[c][f]);
      total += m;
    }
    best = std::min(best, total);
  }
  return best;
}

// Regularized hinge objective written out independently of the library:
// lambda/2 (|w|^2 + b^2) + mean(max(0, 1 - y (w.x + b))).
inline double hinge_objective(const std::vector<std::vector<double>>& x, const std::vector<double>& y, double lambda,
                              const std::vector<double>& wb) {
  const std::size_t d = wb.size() - 1;
  double reg = 0.0, loss = 0.0;
  for (double v : wb) reg += v * v;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double s = wb[d];
    for (std::size_t j = 0; j < d; ++j) s += wb[j] * x[i][j];
    loss += std::max(0.0, 1.0 - y[i] * s);
  }
  return 0.5 * lambda * reg + loss / static_cast<double>(x.size());
}

// Deterministic full-batch subgradient descent, step 1/(lambda (t+1)), for
// many iterations; returns the best objective seen.
inline double full_batch_hinge_minimum(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                                       double lambda, int iterations) {
  const std::size_t d = x.front().size();
  std::vector<double> wb(d + 1, 0.0), g(d + 1);
  double best = hinge_objective(x, y, lambda, wb);
  for (int t = 1; t <= iterations; ++t) {
    for (std::size_t j = 0; j <= d; ++j) g[j] = lambda * wb[j];
    for (std::size_t i = 0; i < x.size(); ++i) {
      double s = wb[d];
      for (std::size_t j = 0; j < d; ++j) s += wb[j] * x[i][j];
      if (y[i] * s < 1.0) {
        for (std::size_t j = 0; j < d; ++j) g[j] -= y[i] * x[i][j] / static_cast<double>(x.size());
        g[d] -= y[i] / static_cast<double>(x.size());
      }
    }
    const double eta = 1.0 / (lambda * (t + 1));
    for (std::size_t j = 0; j <= d; ++j) wb[j] -= eta * g[j];
    best = std::min(best, hinge_objective(x, y, lambda, wb));
  }
  return best;
}

}  // namespace posenorm::oracle
