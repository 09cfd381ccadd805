#pragma once

#include <memory>
#include <optional>
#include <string>

#include "segchange/backbone.hpp"
#include "segchange/bev.hpp"
#include "segchange/config.hpp"
#include "segchange/dataio.hpp"
#include "segchange/fuse.hpp"
#include "segchange/maskdec.hpp"
#include "segchange/metrics.hpp"
#include "segchange/textcond.hpp"

namespace segchange {

// The full detector: shared backbone over both phases, BEV conversion
// before differencing, FPN fusion, text-conditioned query decoding.
// Construction is a pure function of the config (per-name init streams),
// so two models built from equal configs are bit-identical.
class ChangeModel {
 public:
  explicit ChangeModel(const TrainConfig& cfg);

  // Change logits at input resolution. The prompt is interpreted per
  // text.mode; pass the sample's prompt (or nullopt).
  ad::Var forward(const Tensor& image_t1, const Tensor& image_t2,
                  const std::optional<std::string>& prompt,
                  AttnStats* stats = nullptr) const;

  ad::Var sample_loss(const BitemporalSample& s) const;

  Tensor predict(const BitemporalSample& s) const;  // binarized at the config threshold

  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }
  const TrainConfig& config() const { return cfg_; }
  const BevConverter& bev() const { return *bev_; }

  static bool is_backbone_param(const std::string& name);

 private:
  std::optional<TextEmbedding> prepare_text(const std::optional<std::string>& prompt) const;

  TrainConfig cfg_;
  ParamRegistry params_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<BevConverter> bev_;
  std::unique_ptr<FuseModule> fuse_;
  std::unique_ptr<MaskDecoder> decoder_;
  std::unique_ptr<TextProvider> provider_;
};

}  // namespace segchange
