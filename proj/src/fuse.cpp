#include "segchange/fuse.hpp"

#include "segchange/errors.hpp"

namespace segchange {

FuseModule::FuseModule(const std::array<int, 4>& in_channels, int diff_channels,
                       int fpn_channels, ParamRegistry& params, const std::string& prefix)
    : diff_channels_(diff_channels), fpn_channels_(fpn_channels) {
  if (diff_channels < 1 || fpn_channels < 1) throw ConfigError("fuse: channel widths >= 1");
  for (int l = 0; l < 4; ++l) {
    const int c = in_channels[static_cast<std::size_t>(l)];
    const std::string ls = std::to_string(l);
    diff_w_[static_cast<std::size_t>(l)] =
        params.conv_init(prefix + "diff" + ls + ".weight", {diff_channels, 2 * c, 1, 1});
    diff_b_[static_cast<std::size_t>(l)] =
        params.zeros(prefix + "diff" + ls + ".bias", {diff_channels});
    lat_w_[static_cast<std::size_t>(l)] =
        params.conv_init(prefix + "lat" + ls + ".weight", {fpn_channels, diff_channels, 1, 1});
    lat_b_[static_cast<std::size_t>(l)] =
        params.zeros(prefix + "lat" + ls + ".bias", {fpn_channels});
  }
  smooth_w_ = params.conv_init(prefix + "smooth.weight", {fpn_channels, fpn_channels, 3, 3});
  smooth_b_ = params.zeros(prefix + "smooth.bias", {fpn_channels});
}

DiffPyramid FuseModule::difference(const FeaturePyramid& p1, const FeaturePyramid& p2) const {
  DiffPyramid out;
  for (int l = 0; l < 4; ++l) {
    const auto& f1 = p1.levels[static_cast<std::size_t>(l)];
    const auto& f2 = p2.levels[static_cast<std::size_t>(l)];
    if (!f1->value.same_shape(f2->value))
      throw ShapeError("difference: level " + std::to_string(l) + " shape mismatch");
    // |f1-f2| and f1+f2 are both invariant under swapping the phases, so the
    // whole module is bit-exactly symmetric.
    auto sym = ad::concat_channels(ad::abs(ad::sub(f1, f2)), ad::add(f1, f2));
    out.levels[static_cast<std::size_t>(l)] =
        ad::relu(ad::conv2d(sym, diff_w_[static_cast<std::size_t>(l)],
                            diff_b_[static_cast<std::size_t>(l)], 1, 0));
  }
  return out;
}

ad::Var FuseModule::fpn_fuse(const DiffPyramid& d) const {
  std::array<ad::Var, 4> lateral;
  for (int l = 0; l < 4; ++l)
    lateral[static_cast<std::size_t>(l)] =
        ad::conv2d(d.levels[static_cast<std::size_t>(l)], lat_w_[static_cast<std::size_t>(l)],
                   lat_b_[static_cast<std::size_t>(l)], 1, 0);
  ad::Var top = lateral[3];
  for (int l = 2; l >= 0; --l)
    top = ad::add(lateral[static_cast<std::size_t>(l)], ad::upsample_nearest2(top));
  return ad::conv2d(top, smooth_w_, smooth_b_, 1, 1);
}

}  // namespace segchange
