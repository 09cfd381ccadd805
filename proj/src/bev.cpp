#include "segchange/bev.hpp"

#include <cmath>

#include "segchange/errors.hpp"

namespace segchange {

TokenGrid flatten_map(ad::Var map) {
  if (map->value.ndim() != 3) throw ShapeError("flatten_map: need (C,H,W)");
  TokenGrid g;
  g.h = map->value.dim(1);
  g.w = map->value.dim(2);
  g.tokens = ad::tokens_from_map(std::move(map));
  return g;
}

ad::Var unflatten_tokens(const TokenGrid& grid) {
  return ad::map_from_tokens(grid.tokens, grid.h, grid.w);
}

BevLevel::BevLevel(BevMode mode, int dim, int attn_dim, ParamRegistry& params,
                   const std::string& prefix, std::uint64_t seed_salt)
    : mode_(mode), dim_(dim), attn_dim_(attn_dim) {
  if (dim < 1 || attn_dim < 1) throw ConfigError("bev: dims must be positive");
  if (mode == BevMode::none) return;  // identity: no parameters at all
  // Gaussian(0, 0.02) weights, zero biases.
  const double sd = 0.02;
  w_z_ = params.gaussian(prefix + "W_z", {dim, dim}, sd, seed_salt);
  b_z_ = params.zeros(prefix + "b_z", {dim});
  if (mode == BevMode::transformer) {
    w_q_ = params.gaussian(prefix + "W_q", {dim, dim}, sd, seed_salt);
    w_k_ = params.gaussian(prefix + "W_k", {dim, dim}, sd, seed_salt);
    w_v_ = params.gaussian(prefix + "W_v", {dim, dim}, sd, seed_salt);
    w_out_ = params.gaussian(prefix + "W_out", {dim, dim}, sd, seed_salt);
  } else {
    w_a_ = params.gaussian(prefix + "w_a", {attn_dim}, sd, seed_salt);
    w_a1_ = params.gaussian(prefix + "W_a1", {attn_dim, dim}, sd, seed_salt);
    w_a2_ = params.gaussian(prefix + "W_a2", {attn_dim, dim}, sd, seed_salt);
    // The pairwise form reads out a D-wide aggregate, the global-context
    // form a D_a-wide ReLU feature; W_out's inner width follows.
    w_out_ = params.gaussian(prefix + "W_out",
                             {dim, mode == BevMode::additive_exact ? dim : attn_dim}, sd,
                             seed_salt);
  }
}

ad::Var BevLevel::project(ad::Var tokens) const {
  if (mode_ == BevMode::none) throw ContractError("bev project: mode none has no projection");
  if (tokens->value.ndim() != 2 || tokens->value.dim(1) != dim_)
    throw ShapeError("bev project: token width != " + std::to_string(dim_));
  return ad::linear(std::move(tokens), w_z_, b_z_);
}

ad::Var BevLevel::attention_exact(ad::Var z, AttnStats* stats) const {
  if (mode_ != BevMode::additive_exact && mode_ != BevMode::additive_linear)
    throw ContractError("attention_exact: needs an additive mode");
  if (z->value.ndim() != 2 || z->value.dim(1) != dim_)
    throw ShapeError("attention_exact: token width != " + std::to_string(dim_));
  const int n = z->value.dim(0);
  auto u = ad::matmul(z, ad::transpose(w_a1_));
  auto v = ad::matmul(z, ad::transpose(w_a2_));
  auto scores = ad::additive_scores(u, v, w_a_);
  if (stats) stats->score_evals += static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n);
  return ad::softmax_rows(scores);
}

ad::Var BevLevel::aggregate(ad::Var attn, ad::Var z) const {
  if (mode_ != BevMode::additive_exact)
    throw ContractError("aggregate: W_out readout is defined for additive_exact");
  if (attn->value.ndim() != 2 || attn->value.dim(0) != attn->value.dim(1))
    throw ShapeError("aggregate: attention must be square");
  if (z->value.ndim() != 2 || attn->value.dim(0) != z->value.dim(0))
    throw ShapeError("aggregate: attention/token count mismatch");
  const int n = attn->value.dim(0);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += attn->value.at(i, j);
    if (std::abs(s - 1.0) > 1e-4)
      throw ContractError("aggregate: attention row " + std::to_string(i) +
                          " sums to " + std::to_string(s) + ", not 1");
  }
  auto pooled = ad::matmul(attn, z);
  return ad::add(z, ad::matmul(pooled, ad::transpose(w_out_)));
}

ad::Var BevLevel::convert_linear(ad::Var z, AttnStats* stats, Tensor* alpha_out) const {
  if (mode_ != BevMode::additive_linear)
    throw ContractError("convert_linear: mode must be additive_linear");
  if (z->value.ndim() != 2 || z->value.dim(1) != dim_)
    throw ShapeError("convert_linear: token width != " + std::to_string(dim_));
  const int n = z->value.dim(0);
  // global scores: one evaluation per token, never an n x n object
  auto v2 = ad::matmul(z, ad::transpose(w_a2_));                      // (n, Da)
  auto s = ad::matmul(ad::relu(v2), ad::reshape(w_a_, {attn_dim_, 1}));  // (n, 1)
  auto alpha = ad::softmax_rows(ad::transpose(s));                    // (1, n)
  if (stats) stats->score_evals += static_cast<std::uint64_t>(n);
  if (alpha_out) *alpha_out = alpha->value;
  auto g = ad::matmul(alpha, z);                // (1, D)
  auto g2 = ad::matmul(g, ad::transpose(w_a2_));  // (1, Da)
  auto pre = ad::add_rowvec(ad::matmul(z, ad::transpose(w_a1_)), g2);
  return ad::add(z, ad::matmul(ad::relu(pre), ad::transpose(w_out_)));
}

ad::Var BevLevel::convert_transformer(ad::Var z, AttnStats* stats, Tensor* attn_out) const {
  if (mode_ != BevMode::transformer)
    throw ContractError("convert_transformer: mode must be transformer");
  if (z->value.ndim() != 2 || z->value.dim(1) != dim_)
    throw ShapeError("convert_transformer: token width != " + std::to_string(dim_));
  const int n = z->value.dim(0);
  auto q = ad::matmul(z, ad::transpose(w_q_));
  auto k = ad::matmul(z, ad::transpose(w_k_));
  auto v = ad::matmul(z, ad::transpose(w_v_));
  auto attn = ad::softmax_rows(
      ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(dim_))));
  if (stats) stats->score_evals += static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n);
  if (attn_out) *attn_out = attn->value;
  return ad::add(z, ad::matmul(ad::matmul(attn, v), ad::transpose(w_out_)));
}

ad::Var BevLevel::convert_tokens(ad::Var tokens, AttnStats* stats) const {
  switch (mode_) {
    case BevMode::none:
      return tokens;
    case BevMode::transformer:
      return convert_transformer(project(std::move(tokens)), stats);
    case BevMode::additive_exact: {
      auto z = project(std::move(tokens));
      return aggregate(attention_exact(z, stats), z);
    }
    case BevMode::additive_linear:
      return convert_linear(project(std::move(tokens)), stats);
  }
  throw ContractError("convert_tokens: bad mode");
}

BevConverter::BevConverter(BevMode mode, const std::array<int, 4>& channels, int attn_dim,
                           ParamRegistry& params, const std::string& prefix,
                           std::uint64_t seed_salt)
    : mode_(mode) {
  for (int l = 0; l < 4; ++l)
    levels_[static_cast<std::size_t>(l)] = std::make_unique<BevLevel>(
        mode, channels[static_cast<std::size_t>(l)], attn_dim, params,
        prefix + "l" + std::to_string(l) + ".", seed_salt);
}

std::pair<FeaturePyramid, FeaturePyramid> BevConverter::convert(const FeaturePyramid& p1,
                                                                const FeaturePyramid& p2,
                                                                AttnStats* stats) const {
  for (int l = 0; l < 4; ++l)
    if (!p1.levels[static_cast<std::size_t>(l)]->value.same_shape(
            p2.levels[static_cast<std::size_t>(l)]->value))
      throw ShapeError("bev convert: pyramids disagree at level " + std::to_string(l));
  if (mode_ == BevMode::none) return {p1, p2};  // bit-equal passthrough

  FeaturePyramid o1, o2;
  for (int l = 0; l < 4; ++l) {
    const auto& lvl = *levels_[static_cast<std::size_t>(l)];
    for (auto [src, dst] : {std::pair{&p1, &o1}, std::pair{&p2, &o2}}) {
      TokenGrid g = flatten_map(src->levels[static_cast<std::size_t>(l)]);
      g.tokens = lvl.convert_tokens(g.tokens, stats);
      dst->levels[static_cast<std::size_t>(l)] = unflatten_tokens(g);
    }
  }
  return {o1, o2};
}

}  // namespace segchange
