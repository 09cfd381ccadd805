#include "segchange/backbone.hpp"

#include <mutex>
#include <unordered_map>

#include "segchange/errors.hpp"

namespace segchange {

void validate_pyramid(const FeaturePyramid& p, int input_h, int input_w) {
  for (int l = 0; l < 4; ++l) {
    const auto& v = p.levels[static_cast<std::size_t>(l)]->value;
    if (v.ndim() != 3) throw ShapeError("pyramid level must be (C,H,W)");
    const int s = FeaturePyramid::strides[static_cast<std::size_t>(l)];
    if (v.dim(1) != input_h / s || v.dim(2) != input_w / s)
      throw ShapeError("pyramid level " + std::to_string(l) + " violates stride " +
                       std::to_string(s));
    if (!v.all_finite())
      throw ValidationError("pyramid level " + std::to_string(l) + " has non-finite values");
  }
}

namespace {

// Reference desk-scale backbone: four stages of two [conv -> channel
// layernorm -> ReLU] blocks. The first stage downsamples by 4 (both convs
// stride 2), later stages by 2. Normalization is per-sample, so batch size 1
// at eval time matches training numerics.
class TinyEncoder : public Encoder {
 public:
  TinyEncoder(const BackboneSpec& spec, ParamRegistry& params, const std::string& prefix)
      : channels_(spec.channels) {
    int in_c = 3;
    for (int s = 0; s < 4; ++s) {
      const int out_c = channels_[static_cast<std::size_t>(s)];
      const std::string base = prefix + "stage" + std::to_string(s) + ".";
      auto& st = stages_[static_cast<std::size_t>(s)];
      st.w_a = params.conv_init(base + "conv_a.weight", {out_c, in_c, 3, 3});
      st.b_a = params.zeros(base + "conv_a.bias", {out_c});
      st.g_a = params.ones(base + "norm_a.gain", {out_c});
      st.n_a = params.zeros(base + "norm_a.bias", {out_c});
      st.w_b = params.conv_init(base + "conv_b.weight", {out_c, out_c, 3, 3});
      st.b_b = params.zeros(base + "conv_b.bias", {out_c});
      st.g_b = params.ones(base + "norm_b.gain", {out_c});
      st.n_b = params.zeros(base + "norm_b.bias", {out_c});
      in_c = out_c;
    }
  }

  FeaturePyramid encode(const Tensor& image) const override {
    if (image.ndim() != 3 || image.dim(0) != 3) throw ShapeError("encode: image must be (3,H,W)");
    const int h = image.dim(1), w = image.dim(2);
    if (h % 32 != 0 || w % 32 != 0)
      throw ShapeError("encode: dimensions must be divisible by 32, got " + std::to_string(h) +
                       "x" + std::to_string(w));
    FeaturePyramid pyr;
    ad::Var x = ad::constant(image);
    for (int s = 0; s < 4; ++s) {
      const auto& st = stages_[static_cast<std::size_t>(s)];
      x = ad::relu(ad::layernorm_channels(ad::conv2d(x, st.w_a, st.b_a, 2, 1), st.g_a, st.n_a));
      const int stride_b = s == 0 ? 2 : 1;
      x = ad::relu(
          ad::layernorm_channels(ad::conv2d(x, st.w_b, st.b_b, stride_b, 1), st.g_b, st.n_b));
      pyr.levels[static_cast<std::size_t>(s)] = x;
    }
    validate_pyramid(pyr, h, w);
    return pyr;
  }

  std::array<int, 4> channels() const override { return channels_; }

 private:
  struct Stage {
    ad::Var w_a, b_a, g_a, n_a;
    ad::Var w_b, b_b, g_b, n_b;
  };
  std::array<int, 4> channels_;
  std::array<Stage, 4> stages_;
};

struct RegistryEntry {
  BackboneSpec spec;
  EncoderFactory factory;
};

std::unordered_map<std::string, RegistryEntry>& registry() {
  static std::unordered_map<std::string, RegistryEntry> reg = [] {
    std::unordered_map<std::string, RegistryEntry> r;
    BackboneSpec tiny{.name = "tiny", .channels = {8, 16, 32, 64}, .init_seed = 0};
    r["tiny"] = {tiny, [](const BackboneSpec& spec, ParamRegistry& params,
                          const std::string& prefix) -> std::unique_ptr<Encoder> {
                   return std::make_unique<TinyEncoder>(spec, params, prefix);
                 }};
    return r;
  }();
  return reg;
}

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

void register_backbone(const BackboneSpec& spec, EncoderFactory factory) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  for (int c : spec.channels)
    if (c <= 0) throw ValidationError("backbone channel widths must be positive");
  auto& reg = registry();
  if (reg.count(spec.name)) throw RegistryError("backbone already registered: " + spec.name);
  reg[spec.name] = {spec, std::move(factory)};
}

BackboneSpec backbone_spec(const std::string& name) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  const auto it = registry().find(name);
  if (it == registry().end()) throw RegistryError("backbone not registered: " + name);
  return it->second.spec;
}

std::unique_ptr<Encoder> make_encoder(const BackboneSpec& spec, ParamRegistry& params,
                                      const std::string& prefix) {
  EncoderFactory factory;
  {
    std::lock_guard<std::mutex> lock(registry_mutex());
    const auto it = registry().find(spec.name);
    if (it == registry().end()) throw RegistryError("backbone not registered: " + spec.name);
    factory = it->second.factory;
  }
  return factory(spec, params, prefix);
}

}  // namespace segchange
