#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "segchange/autodiff.hpp"
#include "segchange/backbone.hpp"
#include "segchange/config.hpp"
#include "segchange/params.hpp"

namespace segchange {

// Token view of a feature map: n = h*w rows of width D, row-major over
// spatial positions.
struct TokenGrid {
  ad::Var tokens;
  int h = 0;
  int w = 0;
};

// Score-evaluation instrumentation, per call. The exact path evaluates n^2
// pairwise scores, the linear path n global ones.
struct AttnStats {
  std::uint64_t score_evals = 0;
};

// One pyramid level of the BEV space converter. The latent width equals the
// level's channel width; attention happens in an attn_dim-wide space.
//
// Modes: none (identity passthrough), transformer (scaled dot-product
// baseline), additive_exact (the written pairwise form), additive_linear
// (global-context form that never materializes an n x n object).
class BevLevel {
 public:
  BevLevel(BevMode mode, int dim, int attn_dim, ParamRegistry& params,
           const std::string& prefix, std::uint64_t seed_salt = 0);

  // z_i = W_z x_i + b_z for every token.
  ad::Var project(ad::Var tokens) const;

  // Row-stochastic attention A_ij = softmax_j(w_a' ReLU(W_a1 z_i + W_a2 z_j)).
  // Valid for both additive modes; this is the quadratic reference.
  ad::Var attention_exact(ad::Var z, AttnStats* stats = nullptr) const;

  // out_i = z_i + W_out (sum_j A_ij z_j). Requires a row-stochastic A.
  ad::Var aggregate(ad::Var attn, ad::Var z) const;

  // Global-context path: s_j = w_a' ReLU(W_a2 z_j), alpha = softmax(s),
  // g = sum_j alpha_j z_j, out_i = z_i + W_out ReLU(W_a1 z_i + W_a2 g).
  // Theta(n * D * D_a); optionally reports alpha for inspection.
  ad::Var convert_linear(ad::Var z, AttnStats* stats = nullptr,
                         Tensor* alpha_out = nullptr) const;

  ad::Var convert_transformer(ad::Var z, AttnStats* stats = nullptr,
                              Tensor* attn_out = nullptr) const;

  // Full per-level path: project then the mode's attention. Mode none
  // returns the input untouched.
  ad::Var convert_tokens(ad::Var tokens, AttnStats* stats = nullptr) const;

  BevMode mode() const { return mode_; }
  int dim() const { return dim_; }
  int attn_dim() const { return attn_dim_; }

 private:
  BevMode mode_;
  int dim_;
  int attn_dim_;
  ad::Var w_z_, b_z_;
  ad::Var w_a_, w_a1_, w_a2_;
  ad::Var w_out_;
  ad::Var w_q_, w_k_, w_v_;
};

// Applies one shared per-level parameter set to both temporal pyramids,
// level by level.
class BevConverter {
 public:
  BevConverter(BevMode mode, const std::array<int, 4>& channels, int attn_dim,
               ParamRegistry& params, const std::string& prefix, std::uint64_t seed_salt = 0);

  std::pair<FeaturePyramid, FeaturePyramid> convert(const FeaturePyramid& p1,
                                                    const FeaturePyramid& p2,
                                                    AttnStats* stats = nullptr) const;

  const BevLevel& level(int l) const { return *levels_[static_cast<std::size_t>(l)]; }
  BevMode mode() const { return mode_; }

 private:
  BevMode mode_;
  std::array<std::unique_ptr<BevLevel>, 4> levels_;
};

TokenGrid flatten_map(ad::Var map);
ad::Var unflatten_tokens(const TokenGrid& grid);

}  // namespace segchange
