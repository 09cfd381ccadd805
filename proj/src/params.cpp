#include "segchange/params.hpp"

#include <cmath>

#include "segchange/errors.hpp"
#include "segchange/rng.hpp"

namespace segchange {

ad::Var ParamRegistry::insert(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  ad::Var v = ad::param(std::move(value));
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

ad::Var ParamRegistry::gaussian(const std::string& name, std::vector<int> shape, double stddev,
                                std::uint64_t salt) {
  Tensor t(std::move(shape));
  Rng rng(mix_seed(mix_seed(seed_, salt), fnv1a64(name)));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.gaussian() * stddev;
  return insert(name, std::move(t));
}

ad::Var ParamRegistry::zeros(const std::string& name, std::vector<int> shape) {
  return insert(name, Tensor(std::move(shape)));
}

ad::Var ParamRegistry::ones(const std::string& name, std::vector<int> shape) {
  return insert(name, Tensor::full(std::move(shape), 1.0));
}

ad::Var ParamRegistry::conv_init(const std::string& name, std::vector<int> shape) {
  if (shape.size() != 4) throw ShapeError("conv_init expects (OC,C,KH,KW)");
  const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
  return gaussian(name, std::move(shape), std::sqrt(2.0 / fan_in));
}

ad::Var ParamRegistry::linear_init(const std::string& name, std::vector<int> shape) {
  if (shape.size() != 2) throw ShapeError("linear_init expects (out,in)");
  const double fan_in = static_cast<double>(shape[1]);
  return gaussian(name, std::move(shape), std::sqrt(1.0 / fan_in));
}

ad::Var ParamRegistry::find(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw LoadError("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::size_t ParamRegistry::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v->value.numel();
  return n;
}

void ParamRegistry::zero_grads() {
  for (auto& [name, v] : entries_) v->grad.fill(0.0);
}

}  // namespace segchange
