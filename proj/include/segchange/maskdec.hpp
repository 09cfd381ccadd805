#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "segchange/autodiff.hpp"
#include "segchange/params.hpp"
#include "segchange/textcond.hpp"

namespace segchange {

// Query-based mask decoder over the fused stride-4 map: D-Projector text
// fusion, L pre-norm transformer decoder layers refining learnable queries
// (the visual map passes through unchanged), and a mask head with
// squeeze-excitation channel attention producing full-resolution logits.
class MaskDecoder {
 public:
  MaskDecoder(int d_f, int text_width, int num_queries, int layers, bool with_text_pathway,
              ParamRegistry& params, const std::string& prefix);

  // Visual tokens cross-attend to the adapter-projected text rows below
  // valid_length; residual readout. Absent text (or valid_length 0) is the
  // identity.
  ad::Var d_project(ad::Var fused_map, const std::optional<TextEmbedding>& text) const;

  // Self-attention -> cross-attention to visual tokens -> feed-forward, all
  // residual with pre-normalization. Returns (refined queries, map).
  std::pair<ad::Var, ad::Var> decode(ad::Var fused_map, ad::Var queries) const;

  // Per-query dot-product mask logits over map tokens.
  ad::Var query_logits(ad::Var queries, ad::Var fused_map) const;

  // Max over queries -> conv/SE refinement -> bilinear x4 to input
  // resolution (align_corners=false).
  ad::Var predict_mask(ad::Var queries, ad::Var fused_map) const;

  ad::Var forward_logits(ad::Var fused_map, const std::optional<TextEmbedding>& text) const;

  ad::Var queries() const { return queries_; }
  int num_queries() const { return num_queries_; }
  int layer_count() const { return layers_; }
  bool has_text_pathway() const { return with_text_; }

 private:
  struct Attn {
    ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct Layer {
    ad::Var ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
    Attn self_attn, cross_attn;
    ad::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };

  Attn make_attn(ParamRegistry& params, const std::string& prefix, int dim);
  ad::Var attend(ad::Var q_rows, ad::Var kv_rows, const Attn& a) const;

  int d_f_;
  int num_queries_;
  int layers_;
  bool with_text_;
  ad::Var adapter_w_, adapter_b_;
  Attn text_attn_;
  ad::Var queries_;
  std::vector<Layer> layers_params_;
  ad::Var head_conv1_w_, head_conv1_b_;
  ad::Var se_w1_, se_b1_, se_w2_, se_b2_;
  ad::Var head_conv2_w_, head_conv2_b_;
};

// pred = 1 where sigmoid(logit) >= threshold (the boundary is positive).
Tensor binarize(const Tensor& logits, double threshold);

}  // namespace segchange
