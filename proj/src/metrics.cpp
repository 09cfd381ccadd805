#include "segchange/metrics.hpp"

#include <cstdio>

#include "segchange/errors.hpp"

namespace segchange {

Confusion confusion(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt)) throw ShapeError("confusion: shape mismatch");
  Confusion c;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double p = pred[i], g = gt[i];
    if ((p != 0.0 && p != 1.0) || (g != 0.0 && g != 1.0))
      throw ValidationError("confusion: inputs must be binary");
    if (p == 1.0 && g == 1.0)
      ++c.tp;
    else if (p == 1.0)
      ++c.fp;
    else if (g == 1.0)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

MetricsReport report(const Confusion& c) {
  if (c.total() == 0) throw EmptyEvalError("report: no pixels evaluated");
  MetricsReport r;
  r.confusion = c;
  const auto ratio = [](std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.f1 = (r.precision + r.recall) == 0.0
             ? 0.0
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  r.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  r.oa = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  return r;
}

ad::Var loss(ad::Var logits, const Tensor& mask) {
  if (!logits->value.same_shape(mask)) throw ShapeError("loss: logits/mask shape mismatch");
  return ad::add(ad::bce_with_logits_mean(logits, mask), ad::dice_loss(logits, mask));
}

std::string report_to_json(const MetricsReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{\"tp\": %llu, \"fp\": %llu, \"fn\": %llu, \"tn\": %llu, "
                "\"precision\": %.6f, \"recall\": %.6f, \"f1\": %.6f, \"iou\": %.6f, "
                "\"oa\": %.6f}",
                static_cast<unsigned long long>(r.confusion.tp),
                static_cast<unsigned long long>(r.confusion.fp),
                static_cast<unsigned long long>(r.confusion.fn),
                static_cast<unsigned long long>(r.confusion.tn), r.precision, r.recall, r.f1,
                r.iou, r.oa);
  return buf;
}

}  // namespace segchange
