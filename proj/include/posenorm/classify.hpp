#pragma once

// One-vs-all linear SVMs trained by stochastic subgradient descent (Pegasos
// step sizes, iterate averaging), prediction and accuracy evaluation.

#include <posenorm/error.hpp>
#include <posenorm/parallel.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace posenorm {

struct TrainConfig {
  double C = 1.0;
  std::size_t epochs = 100;
  double step_offset = 1.0;  // step size 1 / (lambda * (t + step_offset))
  std::uint64_t rng_seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (!(C > 0.0) || !std::isfinite(C)) fail(ErrorKind::InvalidArgument, "C must be positive");
    if (epochs < 1) fail(ErrorKind::InvalidArgument, "epochs must be >= 1");
    if (!(step_offset >= 0.0)) fail(ErrorKind::InvalidArgument, "step offset must be >= 0");
  }
};

// Binary problem on rows x with targets y in {-1, +1}; the bias is the last
// weight and acts on an implicit constant feature of 1.
struct BinaryProblem {
  std::span<const std::vector<double>> x;
  std::vector<double> y;
  double lambda = 1.0;  // 1 / (C n)
};

inline double augmented_dot(std::span<const double> w, std::span<const double> x) {
  double s = w.back();
  for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * x[j];
  return s;
}

// lambda/2 |w|^2 + mean hinge loss.
inline double svm_objective(const BinaryProblem& p, std::span<const double> w) {
  double reg = 0.0;
  for (double v : w) reg += v * v;
  double loss = 0.0;
  for (std::size_t i = 0; i < p.x.size(); ++i) loss += std::max(0.0, 1.0 - p.y[i] * augmented_dot(w, p.x[i]));
  return 0.5 * p.lambda * reg + loss / static_cast<double>(p.x.size());
}

// A subgradient of svm_objective; margins of exactly 1 take the zero branch.
inline std::vector<double> svm_subgradient(const BinaryProblem& p, std::span<const double> w) {
  std::vector<double> g(w.begin(), w.end());
  for (double& v : g) v *= p.lambda;
  const double inv_n = 1.0 / static_cast<double>(p.x.size());
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    if (p.y[i] * augmented_dot(w, p.x[i]) >= 1.0) continue;
    for (std::size_t j = 0; j < p.x[i].size(); ++j) g[j] -= inv_n * p.y[i] * p.x[i][j];
    g.back() -= inv_n * p.y[i];
  }
  return g;
}

struct BinaryTrace {
  std::vector<double> epoch_objective;  // averaged iterate, after each epoch
};

// Pegasos with one seeded shuffle per epoch; returns the running average of
// all iterates.
inline std::vector<double> train_binary(const BinaryProblem& p, const TrainConfig& cfg, std::uint64_t seed,
                                        BinaryTrace* trace = nullptr) {
  const std::size_t n = p.x.size();
  const std::size_t dim = n ? p.x.front().size() : 0;
  // w = scale * v keeps the shrink step O(1).
  std::vector<double> v(dim + 1, 0.0), avg(dim + 1, 0.0);
  double scale = 1.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (p.lambda * (static_cast<double>(t) + cfg.step_offset));
      const double margin = p.y[i] * scale * augmented_dot(v, p.x[i]);
      const double shrink = 1.0 - eta * p.lambda;
      if (shrink <= 1e-12) {
        std::fill(v.begin(), v.end(), 0.0);
        scale = 1.0;
      } else {
        scale *= shrink;
      }
      if (margin < 1.0) {
        const double step = eta * p.y[i] / scale;
        for (std::size_t j = 0; j < dim; ++j) v[j] += step * p.x[i][j];
        v.back() += step;
      }
      if (scale < 1e-100) {
        for (double& e : v) e *= scale;
        scale = 1.0;
      }
      const double mix = 1.0 / static_cast<double>(t);
      for (std::size_t j = 0; j <= dim; ++j) avg[j] += mix * (scale * v[j] - avg[j]);
    }
    if (trace) trace->epoch_objective.push_back(svm_objective(p, avg));
  }
  return avg;
}

struct LinearModel {
  std::size_t n_classes = 0;
  std::size_t dim = 0;
  std::uint64_t layout_fingerprint = 0;
  std::vector<double> weights;  // n_classes x (dim + 1), row-major, bias last
  TrainConfig config;

  std::span<const double> row(std::size_t c) const { return {weights.data() + c * (dim + 1), dim + 1}; }
};

inline LinearModel train_ova(const std::vector<std::vector<double>>& x, const std::vector<int>& labels,
                             std::size_t n_classes, const TrainConfig& cfg, std::uint64_t layout_fingerprint = 0) {
  cfg.validate();
  if (x.size() != labels.size()) fail(ErrorKind::InvalidArgument, "feature and label counts differ");
  if (n_classes < 2) fail(ErrorKind::DegenerateLabels, "need at least 2 classes");
  const std::size_t dim = x.empty() ? 0 : x.front().size();
  for (const auto& row : x)
    if (row.size() != dim) fail(ErrorKind::DimensionMismatch, "feature vectors differ in length");
  std::vector<std::size_t> counts(n_classes, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= n_classes) fail(ErrorKind::InvalidArgument, "label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t c = 0; c < n_classes; ++c)
    if (counts[c] == 0) fail(ErrorKind::DegenerateLabels, "class " + std::to_string(c) + " has no training examples");

  LinearModel model{n_classes, dim, layout_fingerprint, std::vector<double>(n_classes * (dim + 1), 0.0), cfg};
  const double lambda = 1.0 / (cfg.C * static_cast<double>(x.size()));
  parallel_for(n_classes, cfg.workers, [&](std::size_t c) {
    BinaryProblem p{x, std::vector<double>(x.size()), lambda};
    for (std::size_t i = 0; i < x.size(); ++i) p.y[i] = labels[i] == static_cast<int>(c) ? 1.0 : -1.0;
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.rng_seed), static_cast<std::uint32_t>(cfg.rng_seed >> 32),
                      static_cast<std::uint32_t>(c)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    const std::uint64_t seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    const auto w = train_binary(p, cfg, seed);
    std::copy(w.begin(), w.end(), model.weights.begin() + static_cast<std::ptrdiff_t>(c * (dim + 1)));
  });
  return model;
}

inline std::vector<double> class_scores(const LinearModel& model, std::span<const double> x) {
  if (x.size() != model.dim) {
    fail(ErrorKind::LayoutMismatch,
         "feature length " + std::to_string(x.size()) + " does not match model dimension " + std::to_string(model.dim));
  }
  std::vector<double> s(model.n_classes);
  for (std::size_t c = 0; c < model.n_classes; ++c) s[c] = augmented_dot(model.row(c), x);
  return s;
}

// Argmax of class scores, lowest index on ties.
inline int predict(const LinearModel& model, std::span<const double> x) {
  const auto s = class_scores(model, x);
  return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

inline int predict(const LinearModel& model, std::span<const double> x, std::uint64_t layout_fingerprint) {
  if (layout_fingerprint != model.layout_fingerprint) {
    fail(ErrorKind::LayoutMismatch, "feature layout differs from the one the model was trained on");
  }
  return predict(model, x);
}

struct AccuracyReport {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;                 // NaN for classes absent from the test set
  std::vector<std::vector<std::size_t>> confusion;        // [true][predicted]
  std::vector<int> predictions;
};

inline AccuracyReport evaluate_predictions(const std::vector<int>& predictions, const std::vector<int>& labels,
                                           std::size_t n_classes) {
  if (predictions.empty()) fail(ErrorKind::InvalidArgument, "empty test set");
  if (predictions.size() != labels.size()) fail(ErrorKind::InvalidArgument, "prediction and label counts differ");
  AccuracyReport r;
  r.predictions = predictions;
  r.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++r.confusion.at(static_cast<std::size_t>(labels[i])).at(static_cast<std::size_t>(predictions[i]));
    correct += labels[i] == predictions[i];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto total = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    r.per_class_accuracy.push_back(total ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(total)
                                         : std::nan(""));
  }
  return r;
}

inline AccuracyReport evaluate(const LinearModel& model, const std::vector<std::vector<double>>& x,
                               const std::vector<int>& labels) {
  std::vector<int> pred;
  pred.reserve(x.size());
  for (const auto& row : x) pred.push_back(predict(model, row));
  return evaluate_predictions(pred, labels, model.n_classes);
}

// Serialization ------------------------------------------------------------

inline constexpr std::string_view kModelVersion = "pnm1";

inline std::string fingerprint_hex(std::uint64_t f) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(f));
  return buf;
}

inline nlohmann::ordered_json to_json(const TrainConfig& cfg) {
  return {{"C", cfg.C}, {"epochs", cfg.epochs}, {"step_offset", cfg.step_offset}, {"seed", cfg.rng_seed}};
}

inline nlohmann::ordered_json to_json(const LinearModel& m) {
  nlohmann::ordered_json j;
  j["version"] = kModelVersion;
  j["n_classes"] = m.n_classes;
  j["dim"] = m.dim;
  j["layout_fingerprint"] = fingerprint_hex(m.layout_fingerprint);
  j["train_config"] = to_json(m.config);
  j["weights"] = m.weights;
  return j;
}

inline LinearModel model_from_json(const nlohmann::json& j) {
  try {
    const std::string version = j.value("version", std::string("<none>"));
    if (version != kModelVersion) {
      fail(ErrorKind::FormatError, "model file: expected version " + std::string(kModelVersion) + ", found " + version);
    }
    LinearModel m;
    m.n_classes = j.at("n_classes").get<std::size_t>();
    m.dim = j.at("dim").get<std::size_t>();
    m.layout_fingerprint = std::stoull(j.at("layout_fingerprint").get<std::string>(), nullptr, 16);
    const auto& tc = j.at("train_config");
    m.config.C = tc.at("C").get<double>();
    m.config.epochs = tc.at("epochs").get<std::size_t>();
    m.config.step_offset = tc.at("step_offset").get<double>();
    m.config.rng_seed = tc.at("seed").get<std::uint64_t>();
    m.weights = j.at("weights").get<std::vector<double>>();
    if (m.weights.size() != m.n_classes * (m.dim + 1)) fail(ErrorKind::FormatError, "model file: weight count mismatch");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, std::string("model file: ") + e.what());
  } catch (const std::invalid_argument&) {
    fail(ErrorKind::FormatError, "model file: bad layout fingerprint");
  }
}

}  // namespace posenorm
