#include "segchange/maskdec.hpp"

#include <cmath>

#include "segchange/errors.hpp"

namespace segchange {

namespace {
constexpr int kHeadChannels = 16;  // refinement width of the mask head
constexpr int kSeBottleneck = 4;
}  // namespace

MaskDecoder::Attn MaskDecoder::make_attn(ParamRegistry& params, const std::string& prefix,
                                         int dim) {
  Attn a;
  a.wq = params.linear_init(prefix + "wq", {dim, dim});
  a.bq = params.zeros(prefix + "bq", {dim});
  a.wk = params.linear_init(prefix + "wk", {dim, dim});
  a.bk = params.zeros(prefix + "bk", {dim});
  a.wv = params.linear_init(prefix + "wv", {dim, dim});
  a.bv = params.zeros(prefix + "bv", {dim});
  a.wo = params.linear_init(prefix + "wo", {dim, dim});
  a.bo = params.zeros(prefix + "bo", {dim});
  return a;
}

MaskDecoder::MaskDecoder(int d_f, int text_width, int num_queries, int layers,
                         bool with_text_pathway, ParamRegistry& params,
                         const std::string& prefix)
    : d_f_(d_f), num_queries_(num_queries), layers_(layers), with_text_(with_text_pathway) {
  if (d_f < 1 || num_queries < 1 || layers < 1)
    throw ConfigError("maskdec: d_f, num_queries and layers must be >= 1");
  if (with_text_) {
    adapter_w_ = params.linear_init(prefix + "text_adapter.weight", {d_f, text_width});
    adapter_b_ = params.zeros(prefix + "text_adapter.bias", {d_f});
    text_attn_ = make_attn(params, prefix + "dproj.", d_f);
  }
  queries_ = params.gaussian(prefix + "queries", {num_queries, d_f}, 0.02);
  layers_params_.reserve(static_cast<std::size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    const std::string base = prefix + "layer" + std::to_string(l) + ".";
    Layer lp;
    lp.ln1_g = params.ones(base + "ln1.gain", {d_f});
    lp.ln1_b = params.zeros(base + "ln1.bias", {d_f});
    lp.self_attn = make_attn(params, base + "self.", d_f);
    lp.ln2_g = params.ones(base + "ln2.gain", {d_f});
    lp.ln2_b = params.zeros(base + "ln2.bias", {d_f});
    lp.cross_attn = make_attn(params, base + "cross.", d_f);
    lp.ln3_g = params.ones(base + "ln3.gain", {d_f});
    lp.ln3_b = params.zeros(base + "ln3.bias", {d_f});
    lp.ffn_w1 = params.linear_init(base + "ffn.w1", {2 * d_f, d_f});
    lp.ffn_b1 = params.zeros(base + "ffn.b1", {2 * d_f});
    lp.ffn_w2 = params.linear_init(base + "ffn.w2", {d_f, 2 * d_f});
    lp.ffn_b2 = params.zeros(base + "ffn.b2", {d_f});
    layers_params_.push_back(std::move(lp));
  }
  head_conv1_w_ = params.conv_init(prefix + "head.conv1.weight", {kHeadChannels, 1, 3, 3});
  head_conv1_b_ = params.zeros(prefix + "head.conv1.bias", {kHeadChannels});
  se_w1_ = params.linear_init(prefix + "head.se.w1", {kSeBottleneck, kHeadChannels});
  se_b1_ = params.zeros(prefix + "head.se.b1", {kSeBottleneck});
  se_w2_ = params.linear_init(prefix + "head.se.w2", {kHeadChannels, kSeBottleneck});
  se_b2_ = params.zeros(prefix + "head.se.b2", {kHeadChannels});
  head_conv2_w_ = params.conv_init(prefix + "head.conv2.weight", {1, kHeadChannels, 3, 3});
  head_conv2_b_ = params.zeros(prefix + "head.conv2.bias", {1});
}

ad::Var MaskDecoder::attend(ad::Var q_rows, ad::Var kv_rows, const Attn& a) const {
  auto q = ad::linear(std::move(q_rows), a.wq, a.bq);
  auto k = ad::linear(kv_rows, a.wk, a.bk);
  auto v = ad::linear(std::move(kv_rows), a.wv, a.bv);
  auto attn = ad::softmax_rows(
      ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_f_))));
  return ad::linear(ad::matmul(attn, v), a.wo, a.bo);
}

ad::Var MaskDecoder::d_project(ad::Var fused_map,
                               const std::optional<TextEmbedding>& text) const {
  if (!text) return fused_map;
  if (!with_text_) throw ContractError("d_project: decoder was built without a text pathway");
  validate_embedding(*text);
  if (text->valid_length == 0) return fused_map;  // empty keys: readout defined as zero
  const int h = fused_map->value.dim(1), w = fused_map->value.dim(2);
  auto tokens = ad::tokens_from_map(fused_map);
  auto valid = ad::slice_rows(ad::constant(text->vectors), 0, text->valid_length);
  auto adapted = ad::linear(valid, adapter_w_, adapter_b_);
  auto readout = attend(tokens, adapted, text_attn_);
  return ad::map_from_tokens(ad::add(tokens, readout), h, w);
}

std::pair<ad::Var, ad::Var> MaskDecoder::decode(ad::Var fused_map, ad::Var queries) const {
  if (queries->value.ndim() != 2 || queries->value.dim(1) != d_f_)
    throw ShapeError("decode: queries must be (N_q, d_f)");
  if (fused_map->value.dim(0) != d_f_) throw ShapeError("decode: map width != d_f");
  auto visual = ad::tokens_from_map(fused_map);
  ad::Var q = std::move(queries);
  for (const Layer& lp : layers_params_) {
    q = ad::add(q, attend(ad::layernorm_rows(q, lp.ln1_g, lp.ln1_b), q, lp.self_attn));
    q = ad::add(q, attend(ad::layernorm_rows(q, lp.ln2_g, lp.ln2_b), visual, lp.cross_attn));
    auto ffn_in = ad::layernorm_rows(q, lp.ln3_g, lp.ln3_b);
    auto ffn = ad::linear(ad::relu(ad::linear(ffn_in, lp.ffn_w1, lp.ffn_b1)), lp.ffn_w2,
                          lp.ffn_b2);
    q = ad::add(q, ffn);
  }
  // queries refine; the visual map passes through unchanged
  return {q, fused_map};
}

ad::Var MaskDecoder::query_logits(ad::Var queries, ad::Var fused_map) const {
  auto tokens = ad::tokens_from_map(std::move(fused_map));
  return ad::matmul(std::move(queries), ad::transpose(tokens));  // (N_q, h*w)
}

ad::Var MaskDecoder::predict_mask(ad::Var queries, ad::Var fused_map) const {
  const int h = fused_map->value.dim(1), w = fused_map->value.dim(2);
  auto per_query = query_logits(std::move(queries), fused_map);
  auto combined = ad::reshape(ad::colwise_max(per_query), {1, h, w});
  auto x = ad::relu(ad::conv2d(combined, head_conv1_w_, head_conv1_b_, 1, 1));
  // squeeze-excitation: global pool -> bottleneck -> sigmoid gate
  auto pooled = ad::reshape(ad::global_avg_pool(x), {1, kHeadChannels});
  auto gate = ad::sigmoid(
      ad::linear(ad::relu(ad::linear(pooled, se_w1_, se_b1_)), se_w2_, se_b2_));
  x = ad::channel_scale(x, ad::reshape(gate, {kHeadChannels}));
  auto refined = ad::conv2d(x, head_conv2_w_, head_conv2_b_, 1, 1);
  auto up = ad::upsample_bilinear(refined, 4);
  return ad::reshape(up, {4 * h, 4 * w});
}

ad::Var MaskDecoder::forward_logits(ad::Var fused_map,
                                    const std::optional<TextEmbedding>& text) const {
  auto projected = d_project(std::move(fused_map), text);
  auto [q, map] = decode(projected, queries_);
  return predict_mask(q, map);
}

Tensor binarize(const Tensor& logits, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ValidationError("binarize: threshold must lie in (0,1)");
  Tensor out(logits.shape());
  // sigmoid(x) >= t  <=>  x >= logit(t); evaluate in logit space to avoid
  // overflow at extreme logits
  const double cut = std::log(threshold / (1.0 - threshold));
  for (std::size_t i = 0; i < logits.numel(); ++i) out[i] = logits[i] >= cut ? 1.0 : 0.0;
  return out;
}

}  // namespace segchange
