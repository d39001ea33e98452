#pragma once

#include <cstddef>

#include "krawdetect/error.hpp"

namespace krawdetect {

// Positive class = adversarial.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }

  void add(int truth, int predicted) noexcept {
    if (truth == 1) (predicted == 1 ? tp : fn)++;
    else (predicted == 1 ? fp : tn)++;
  }

  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct Metrics {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

// Any 0/0 ratio is reported as 0.
inline Metrics compute_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw DegenerateError("no evaluated examples");
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  Metrics m;
  m.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  m.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
  m.accuracy = ratio(static_cast<double>(c.tp + c.tn), static_cast<double>(c.total()));
  return m;
}

inline double false_positive_rate(const ConfusionCounts& c) {
  return c.fp + c.tn > 0 ? static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn) : 0.0;
}

}  // namespace krawdetect
