#include "segchange/tensor.hpp"

#include <cmath>
#include <cstdlib>

#include "segchange/errors.hpp"

namespace segchange {

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 4) throw ShapeError("tensor rank must be 1..4");
  std::size_t n = 1;
  for (int d : shape_) {
    if (d <= 0) throw ShapeError("tensor dims must be positive");
    n *= static_cast<std::size_t>(d);
  }
  data_.assign(n, 0.0);
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::abs(x));
  return m;
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  Tensor t(std::move(new_shape));
  if (t.numel() != numel()) throw ShapeError("reshape changes element count");
  for (std::size_t i = 0; i < numel(); ++i) t[i] = data_[i];
  return t;
}

}  // namespace segchange
