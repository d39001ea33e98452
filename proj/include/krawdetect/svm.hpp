#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "krawdetect/error.hpp"
#include "krawdetect/keyed_selection.hpp"

namespace krawdetect {

struct TrainConfig {
  double lambda = 1e-4;
  int epochs = 50;
  std::string schedule = "pegasos";  // step 1 / (lambda * t)
  std::uint64_t shuffle_seed = 0;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("svm lambda must be > 0");
    if (epochs < 1) throw ConfigError("svm epochs must be >= 1");
    if (schedule != "pegasos") throw ConfigError("unknown learning-rate schedule '" + schedule + "'");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct SvmModel {
  std::vector<double> weights;
  double bias = 0.0;
  TrainConfig train_config;

  friend bool operator==(const SvmModel&, const SvmModel&) = default;
};

struct Prediction {
  int label = 0;
  double margin = 0.0;
};

// label 1 iff margin > 0; a zero margin counts as clean.
inline Prediction predict(const SvmModel& model, std::span<const double> v) {
  if (v.size() != model.weights.size())
    throw ShapeError("feature dimension " + std::to_string(v.size()) + " != model dimension " +
                     std::to_string(model.weights.size()));
  double margin = model.bias;
  for (std::size_t i = 0; i < v.size(); ++i) margin += model.weights[i] * v[i];
  return {margin > 0.0 ? 1 : 0, margin};
}

// lambda/2 |(w, b)|^2 + mean hinge, labels in {0, 1}.
inline double hinge_objective(const SvmModel& model, const std::vector<std::vector<double>>& x,
                              const std::vector<int>& labels, double lambda) {
  double reg = model.bias * model.bias;
  for (double w : model.weights) reg += w * w;
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double y = labels[i] == 1 ? 1.0 : -1.0;
    loss += std::max(0.0, 1.0 - y * predict(model, x[i]).margin);
  }
  return 0.5 * lambda * reg + loss / static_cast<double>(x.size());
}

// Pegasos-style stochastic subgradient descent on the L2-regularized hinge
// loss with step 1 / (lambda t). The bias is an extra always-one feature.
// After epoch e the output model is the average of the iterates over epochs
// floor(e/2)..e, so the returned model averages the second half of training;
// the last iterate alone is too noisy at small lambda. Sample order comes
// from a SplitMix64 stream seeded with shuffle_seed, so a fixed input
// reproduces the same weights bit for bit. If `history` is given it receives
// the objective of the output model at each epoch boundary.
inline SvmModel train_svm(const std::vector<std::vector<double>>& x, const std::vector<int>& labels,
                          const TrainConfig& cfg, std::vector<double>* history = nullptr) {
  cfg.validate();
  if (x.size() != labels.size()) throw ShapeError("feature and label counts differ");
  if (x.empty()) throw DegenerateError("no training examples");
  const std::size_t dim = x.front().size();
  bool has0 = false, has1 = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != dim) throw ShapeError("training vectors differ in dimension");
    if (labels[i] == 0) has0 = true;
    else if (labels[i] == 1) has1 = true;
    else throw RangeError("detector labels must be 0 or 1");
  }
  if (!has0 || !has1) throw DegenerateError("svm training needs both classes");

  // w[dim] is the bias.
  std::vector<double> w(dim + 1, 0.0);
  std::vector<std::vector<double>> epoch_mean;  // mean iterate of each epoch

  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(cfg.shuffle_seed);
  const double radius2 = 1.0 / cfg.lambda;
  std::uint64_t t = 0;

  // Every epoch has the same number of steps, so the mean of epoch means is
  // the mean over the window's iterates.
  SvmModel model;
  model.train_config = cfg;
  auto output = [&](std::size_t last) {
    std::vector<double> avg(dim + 1, 0.0);
    const std::size_t first = last / 2;
    for (std::size_t e = first; e <= last; ++e)
      for (std::size_t k = 0; k <= dim; ++k) avg[k] += epoch_mean[e][k];
    const double inv = 1.0 / static_cast<double>(last - first + 1);
    model.weights.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) model.weights[k] = avg[k] * inv;
    model.bias = avg[dim] * inv;
  };

  if (history) history->clear();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    std::vector<double> sum(dim + 1, 0.0);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (cfg.lambda * static_cast<double>(t));
      const double y = labels[i] == 1 ? 1.0 : -1.0;
      double margin = w[dim];
      for (std::size_t k = 0; k < dim; ++k) margin += w[k] * x[i][k];
      const double shrink = 1.0 - eta * cfg.lambda;
      for (double& v : w) v *= shrink;
      if (y * margin < 1.0) {
        for (std::size_t k = 0; k < dim; ++k) w[k] += eta * y * x[i][k];
        w[dim] += eta * y;
      }
      double norm2 = 0.0;
      for (double v : w) norm2 += v * v;
      if (norm2 > radius2) {
        const double s = std::sqrt(radius2 / norm2);
        for (double& v : w) v *= s;
      }
      for (std::size_t k = 0; k <= dim; ++k) sum[k] += w[k];
    }
    for (double& v : sum) v /= static_cast<double>(order.size());
    epoch_mean.push_back(std::move(sum));
    if (history) {
      output(epoch_mean.size() - 1);
      history->push_back(hinge_objective(model, x, labels, cfg.lambda));
    }
  }
  output(epoch_mean.size() - 1);
  for (double v : model.weights)
    if (!std::isfinite(v)) throw StabilityError("svm weights diverged");
  return model;
}

}  // namespace krawdetect
