#pragma once

#include <cstdint>
#include <string>

#include "segchange/autodiff.hpp"
#include "segchange/tensor.hpp"

namespace segchange {

// Exact integer pixel counts. Addition is field-wise, so per-sample counts
// merge associatively into dataset totals.
struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend Confusion operator+(Confusion a, const Confusion& b) { return a += b; }
  bool operator==(const Confusion&) const = default;
};

struct MetricsReport {
  Confusion confusion;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double iou = 0.0;
  double oa = 0.0;
};

// Both masks binary, equal shapes.
Confusion confusion(const Tensor& pred, const Tensor& gt);

// precision/recall/f1/iou/oa with the 0/0 -> 0 convention.
MetricsReport report(const Confusion& c);

// BCE-with-logits mean plus Dice with smoothing 1; finite and differentiable
// for all finite logits.
ad::Var loss(ad::Var logits, const Tensor& mask);

// JSON object with integer confusion fields and 6-decimal metric fields.
std::string report_to_json(const MetricsReport& r);

}  // namespace segchange
