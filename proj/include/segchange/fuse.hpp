#pragma once

#include <array>
#include <string>

#include "segchange/autodiff.hpp"
#include "segchange/backbone.hpp"
#include "segchange/params.hpp"

namespace segchange {

// Per-level temporal differencing into diff_channels-wide maps.
struct DiffPyramid {
  std::array<ad::Var, 4> levels;
};

// The difference module followed by top-down FPN fusion into one stride-4
// map of fpn_channels width.
class FuseModule {
 public:
  FuseModule(const std::array<int, 4>& in_channels, int diff_channels, int fpn_channels,
             ParamRegistry& params, const std::string& prefix);

  // Per level: pointwise conv over the symmetric basis [|f1-f2| ; f1+f2],
  // then ReLU. Exactly symmetric in its arguments.
  DiffPyramid difference(const FeaturePyramid& p1, const FeaturePyramid& p2) const;

  // Lateral 1x1 convs, coarse-to-fine nearest-neighbor upsample-and-add,
  // one 3x3 smoothing conv at stride 4.
  ad::Var fpn_fuse(const DiffPyramid& d) const;

  int diff_channels() const { return diff_channels_; }
  int fpn_channels() const { return fpn_channels_; }

 private:
  int diff_channels_;
  int fpn_channels_;
  std::array<ad::Var, 4> diff_w_, diff_b_;
  std::array<ad::Var, 4> lat_w_, lat_b_;
  ad::Var smooth_w_, smooth_b_;
};

}  // namespace segchange
