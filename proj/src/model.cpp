#include "segchange/model.hpp"

#include "segchange/errors.hpp"

namespace segchange {

ChangeModel::ChangeModel(const TrainConfig& cfg) : cfg_(cfg), params_(cfg.seed) {
  cfg_.validate();
  BackboneSpec spec = backbone_spec(cfg_.backbone.name);
  spec.channels = cfg_.backbone.channels;
  encoder_ = make_encoder(spec, params_, "backbone.");
  bev_ = std::make_unique<BevConverter>(cfg_.bev.mode, cfg_.backbone.channels, cfg_.bev.attn_dim,
                                        params_, "bev.", cfg_.bev.seed);
  fuse_ = std::make_unique<FuseModule>(cfg_.backbone.channels, cfg_.fuse.diff_channels,
                                       cfg_.fuse.fpn_channels, params_, "fuse.");
  const bool with_text = cfg_.text.mode != TextMode::none;
  // text width defaults to the decoder embedding width
  decoder_ = std::make_unique<MaskDecoder>(cfg_.fuse.fpn_channels, cfg_.fuse.fpn_channels,
                                           cfg_.decoder.num_queries, cfg_.decoder.layers,
                                           with_text, params_, "decoder.");
  if (with_text) provider_ = make_provider(cfg_, cfg_.fuse.fpn_channels);
}

std::optional<TextEmbedding> ChangeModel::prepare_text(
    const std::optional<std::string>& prompt) const {
  if (cfg_.text.mode == TextMode::none) return std::nullopt;
  auto e = conditioning(cfg_.text.mode, prompt, cfg_.text.template_text, *provider_);
  if (!e) return std::nullopt;
  // One prompt covers both phases: duplicate it, then aggregate and fit as
  // the decoder expects.
  auto fitted = fit_length(*e, cfg_.text.max_len);
  return aggregate_temporal(fitted, fitted);
}

ad::Var ChangeModel::forward(const Tensor& image_t1, const Tensor& image_t2,
                             const std::optional<std::string>& prompt, AttnStats* stats) const {
  if (!image_t1.same_shape(image_t2)) throw ShapeError("forward: t1/t2 shape mismatch");
  const auto text = prepare_text(prompt);
  FeaturePyramid p1 = encoder_->encode(image_t1);
  FeaturePyramid p2 = encoder_->encode(image_t2);
  auto [c1, c2] = bev_->convert(p1, p2, stats);
  DiffPyramid d = fuse_->difference(c1, c2);
  ad::Var fused = fuse_->fpn_fuse(d);
  return decoder_->forward_logits(fused, text);
}

ad::Var ChangeModel::sample_loss(const BitemporalSample& s) const {
  auto logits = forward(s.image_t1, s.image_t2, s.prompt);
  return loss(logits, s.mask);
}

Tensor ChangeModel::predict(const BitemporalSample& s) const {
  auto logits = forward(s.image_t1, s.image_t2, s.prompt);
  return binarize(logits->value, cfg_.decoder.threshold);
}

bool ChangeModel::is_backbone_param(const std::string& name) {
  return name.rfind("backbone.", 0) == 0;
}

}  // namespace segchange
