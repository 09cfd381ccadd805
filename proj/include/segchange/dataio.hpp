#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segchange/tensor.hpp"

namespace segchange {

// One (t1, t2, change-mask, prompt) record. Images are (3,H,W) in [0,1],
// masks (H,W) with values in {0,1}. H and W must be divisible by 32 so the
// stride-32 pyramid level exists.
struct BitemporalSample {
  std::string id;
  Tensor image_t1;
  Tensor image_t2;
  Tensor mask;
  std::optional<std::string> prompt;
};

struct DatasetSplit {
  std::string name;
  std::vector<BitemporalSample> samples;
};

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct SynthConfig {
  int n_samples = 16;
  int height = 64;
  int width = 64;
  IntRange n_shapes_range{1, 4};
  IntRange shape_size_range{8, 24};
  double change_frac_lo = 0.02;
  double change_frac_hi = 0.35;
  std::uint64_t seed = 0;
};

// Throws ValidationError on any BitemporalSample invariant violation.
void validate_sample(const BitemporalSample& s);

// Standard bitemporal layout: root/{A,B,label}/<file> plus root/list/<split>.txt,
// optional root/prompts.jsonl ({"id":...,"prompt":...} per line, ids are file
// stems). Samples come back in listed order.
DatasetSplit load_dataset(const std::string& root, const std::string& split);

// Deterministic rectangles-on-texture scenes; image_t2 starts as a copy of
// image_t1 and rectangles appear in t2 or disappear from t1. The mask is the
// exact set of pixels whose values differ.
DatasetSplit generate_synthetic(const SynthConfig& cfg);

// 8-bit single-channel PNG with values {0,255}.
void save_mask(const Tensor& mask, const std::string& path);
Tensor load_mask(const std::string& path);

// Materializes a split in the on-disk layout (images as 8-bit PNG), so that
// load_dataset can read it back.
void write_dataset(const DatasetSplit& split, const std::string& root);

}  // namespace segchange
