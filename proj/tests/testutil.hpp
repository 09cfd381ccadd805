#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "segchange/autodiff.hpp"
#include "segchange/rng.hpp"
#include "segchange/tensor.hpp"

namespace testutil {

using segchange::Rng;
using segchange::Tensor;
namespace ad = segchange::ad;

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.gaussian() * scale;
  return t;
}

inline Tensor random_binary(std::vector<int> shape, Rng& rng, double p_one = 0.5) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform() < p_one ? 1.0 : 0.0;
  return t;
}

inline double rel_err(double a, double b) {
  const double d = std::abs(a - b);
  const double m = std::max({std::abs(a), std::abs(b), 1e-6});
  return d / m;
}

// Builds a scalar graph from leaf tensors. Used both for the analytic pass
// (leaves become params) and the finite-difference pass (fresh graph per
// perturbation).
using GraphFn = std::function<ad::Var(const std::vector<ad::Var>&)>;

inline double eval_scalar(const GraphFn& f, const std::vector<Tensor>& leaves) {
  std::vector<ad::Var> vars;
  vars.reserve(leaves.size());
  for (const auto& t : leaves) vars.push_back(ad::constant(t));
  return f(vars)->value[0];
}

struct GradCheckResult {
  bool ok = true;
  double worst = 0.0;
  std::string detail;
};

// Central finite differences against tape gradients, elementwise over every
// leaf. Independent of the backprop implementation by construction.
inline GradCheckResult check_gradients(const GraphFn& f, std::vector<Tensor> leaves,
                                       double h = 1e-5, double tol = 1e-4) {
  GradCheckResult res;
  std::vector<ad::Var> params;
  params.reserve(leaves.size());
  for (const auto& t : leaves) params.push_back(ad::param(t));
  ad::backward(f(params));
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (std::size_t i = 0; i < leaves[li].numel(); ++i) {
      const double orig = leaves[li][i];
      const double hh = h * std::max(1.0, std::abs(orig));
      leaves[li][i] = orig + hh;
      const double lp = eval_scalar(f, leaves);
      leaves[li][i] = orig - hh;
      const double lm = eval_scalar(f, leaves);
      leaves[li][i] = orig;
      const double fd = (lp - lm) / (2.0 * hh);
      const double an = params[li]->grad[i];
      const double err = rel_err(an, fd);
      if (err > res.worst) res.worst = err;
      if (err >= tol && !(std::abs(an) < 1e-8 && std::abs(fd) < 1e-8)) {
        res.ok = false;
        res.detail = "leaf " + std::to_string(li) + " elem " + std::to_string(i) +
                     ": analytic=" + std::to_string(an) + " fd=" + std::to_string(fd);
        return res;
      }
    }
  }
  return res;
}

// Module-level check: perturb registered parameter values in place, rebuild
// the loss graph via `build_loss`, and compare central differences with the
// tape gradients from a single analytic pass.
inline GradCheckResult check_params_fd(
    const std::function<ad::Var()>& build_loss,
    const std::vector<std::pair<std::string, ad::Var>>& params, double h = 1e-5,
    double tol = 1e-4) {
  GradCheckResult res;
  for (const auto& [name, v] : params) v->grad.fill(0.0);
  ad::backward(build_loss());
  for (const auto& [name, v] : params) {
    for (std::size_t i = 0; i < v->value.numel(); ++i) {
      const double orig = v->value[i];
      const double hh = h * std::max(1.0, std::abs(orig));
      v->value[i] = orig + hh;
      const double lp = build_loss()->value[0];
      v->value[i] = orig - hh;
      const double lm = build_loss()->value[0];
      v->value[i] = orig;
      const double fd = (lp - lm) / (2.0 * hh);
      const double an = v->grad[i];
      const double err = rel_err(an, fd);
      if (err > res.worst) res.worst = err;
      if (err >= tol && !(std::abs(an) < 1e-8 && std::abs(fd) < 1e-8)) {
        res.ok = false;
        res.detail = name + "[" + std::to_string(i) + "]: analytic=" + std::to_string(an) +
                     " fd=" + std::to_string(fd);
        return res;
      }
    }
  }
  return res;
}

}  // namespace testutil
