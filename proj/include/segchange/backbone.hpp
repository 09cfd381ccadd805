#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "segchange/autodiff.hpp"
#include "segchange/params.hpp"

namespace segchange {

// Multi-scale features at strides 4/8/16/32 of the input.
struct FeaturePyramid {
  std::array<ad::Var, 4> levels;
  static constexpr std::array<int, 4> strides{4, 8, 16, 32};
};

void validate_pyramid(const FeaturePyramid& p, int input_h, int input_w);

struct BackboneSpec {
  std::string name;
  std::array<int, 4> channels{8, 16, 32, 64};
  std::uint64_t init_seed = 0;
};

// Shared-weight (siamese) encoder: the same instance is applied to both
// time phases. Immutable during forward passes.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual FeaturePyramid encode(const Tensor& image) const = 0;
  virtual std::array<int, 4> channels() const = 0;
};

using EncoderFactory = std::function<std::unique_ptr<Encoder>(
    const BackboneSpec& spec, ParamRegistry& params, const std::string& prefix)>;

// Registry keyed by spec.name; "tiny" is built in.
void register_backbone(const BackboneSpec& spec, EncoderFactory factory);
BackboneSpec backbone_spec(const std::string& name);  // RegistryError if absent
std::unique_ptr<Encoder> make_encoder(const BackboneSpec& spec, ParamRegistry& params,
                                      const std::string& prefix);

}  // namespace segchange
