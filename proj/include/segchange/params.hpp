#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "segchange/autodiff.hpp"

namespace segchange {

// Named trainable parameters. Each parameter's initialization stream is
// seeded from (master seed, name), so values do not depend on construction
// order or on which optional modules exist.
class ParamRegistry {
 public:
  explicit ParamRegistry(std::uint64_t master_seed) : seed_(master_seed) {}

  // `salt` folds extra entropy (e.g. a module-level seed key) into the
  // name-derived stream.
  ad::Var gaussian(const std::string& name, std::vector<int> shape, double stddev,
                   std::uint64_t salt = 0);
  ad::Var zeros(const std::string& name, std::vector<int> shape);
  ad::Var ones(const std::string& name, std::vector<int> shape);
  // He initialization for conv kernels (OC,C,KH,KW), sqrt(1/fan_in) for
  // linear weights (out,in).
  ad::Var conv_init(const std::string& name, std::vector<int> shape);
  ad::Var linear_init(const std::string& name, std::vector<int> shape);

  const std::vector<std::pair<std::string, ad::Var>>& entries() const { return entries_; }
  ad::Var find(const std::string& name) const;  // throws LoadError if absent
  std::size_t total_elements() const;
  void zero_grads();

 private:
  ad::Var insert(const std::string& name, Tensor value);

  std::uint64_t seed_;
  std::vector<std::pair<std::string, ad::Var>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace segchange
