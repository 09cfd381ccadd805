#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "segchange/dataio.hpp"
#include "segchange/errors.hpp"
#include "segchange/png_io.hpp"
#include "segchange/rng.hpp"

using namespace segchange;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("segchange_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SynthConfig small_cfg(std::uint64_t seed = 7) {
  SynthConfig cfg;
  cfg.n_samples = 4;
  cfg.height = 64;
  cfg.width = 64;
  cfg.n_shapes_range = {1, 3};
  cfg.shape_size_range = {8, 20};
  cfg.change_frac_lo = 0.02;
  cfg.change_frac_hi = 0.4;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic") {
  auto a = generate_synthetic(small_cfg());
  auto b = generate_synthetic(small_cfg());
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].id == b.samples[i].id);
    CHECK(a.samples[i].image_t1 == b.samples[i].image_t1);
    CHECK(a.samples[i].image_t2 == b.samples[i].image_t2);
    CHECK(a.samples[i].mask == b.samples[i].mask);
    CHECK(a.samples[i].prompt == b.samples[i].prompt);
  }
  auto c = generate_synthetic(small_cfg(8));
  CHECK(c.samples[0].image_t1[0] != a.samples[0].image_t1[0]);
}

TEST_CASE("synthetic change fraction lies within bounds") {
  SynthConfig cfg = small_cfg(3);
  cfg.n_samples = 16;
  cfg.change_frac_lo = 0.05;
  cfg.change_frac_hi = 0.3;
  auto split = generate_synthetic(cfg);
  REQUIRE(split.samples.size() == 16);
  for (const auto& s : split.samples) {
    double mean = 0.0;
    for (std::size_t i = 0; i < s.mask.numel(); ++i) mean += s.mask[i];
    mean /= static_cast<double>(s.mask.numel());
    CHECK(mean >= 0.05);
    CHECK(mean <= 0.3);
    CHECK(mean > 0.0);  // at least one shape, at least one changed pixel
    CHECK(s.prompt.has_value());
  }
}

TEST_CASE("synthetic mask marks exactly the altered pixels") {
  auto split = generate_synthetic(small_cfg(12));
  for (const auto& s : split.samples) {
    const int h = s.mask.dim(0), w = s.mask.dim(1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const bool diff = s.image_t1.at(0, y, x) != s.image_t2.at(0, y, x) ||
                          s.image_t1.at(1, y, x) != s.image_t2.at(1, y, x) ||
                          s.image_t1.at(2, y, x) != s.image_t2.at(2, y, x);
        CHECK(s.mask.at(y, x) == (diff ? 1.0 : 0.0));
      }
  }
}

TEST_CASE("infeasible fraction bounds raise GenerationError") {
  SynthConfig cfg = small_cfg();
  cfg.change_frac_lo = 0.90;  // rectangles of size <= 20x20 cannot cover 90%
  cfg.change_frac_hi = 0.95;
  CHECK_THROWS_AS(generate_synthetic(cfg), GenerationError);
}

TEST_CASE("synth config invariants are checked") {
  SynthConfig cfg = small_cfg();
  cfg.change_frac_lo = 0.4;
  cfg.change_frac_hi = 0.4;
  CHECK_THROWS_AS(generate_synthetic(cfg), ValidationError);
  cfg = small_cfg();
  cfg.height = 48;  // not divisible by 32
  CHECK_THROWS_AS(generate_synthetic(cfg), ValidationError);
  cfg = small_cfg();
  cfg.n_shapes_range = {0, 0};
  CHECK_THROWS_AS(generate_synthetic(cfg), ValidationError);
}

TEST_CASE("save_mask round-trips exactly") {
  const fs::path dir = fresh_dir("mask_rt");
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor mask({32, 32});
    for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const std::string path = (dir / ("m" + std::to_string(trial) + ".png")).string();
    save_mask(mask, path);
    CHECK(load_mask(path) == mask);
  }
}

TEST_CASE("save_mask pixel-value contract") {
  const fs::path dir = fresh_dir("mask_px");
  Tensor zero({4, 4});
  save_mask(zero, (dir / "zero.png").string());
  auto img = read_gray_png((dir / "zero.png").string());
  for (auto p : img.pixels) CHECK(p == 0);

  Tensor one({4, 4});
  one.at(0, 0) = 1.0;
  save_mask(one, (dir / "one.png").string());
  auto img2 = read_gray_png((dir / "one.png").string());
  CHECK(img2.pixels[0] == 255);
  for (std::size_t i = 1; i < img2.pixels.size(); ++i) CHECK(img2.pixels[i] == 0);

  Tensor bad({2, 2});
  bad[0] = 0.5;
  CHECK_THROWS_AS(save_mask(bad, (dir / "bad.png").string()), ValidationError);
  CHECK_THROWS_AS(save_mask(zero, "/nonexistent_dir_zz/x.png"), IoError);
}

TEST_CASE("dataset writes then loads in listed order with prompts") {
  const fs::path dir = fresh_dir("roundtrip");
  auto split = generate_synthetic(small_cfg(5));
  write_dataset(split, dir.string());
  auto loaded = load_dataset(dir.string(), "synthetic");
  REQUIRE(loaded.samples.size() == split.samples.size());
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    CHECK(loaded.samples[i].id == split.samples[i].id);
    CHECK(loaded.samples[i].mask == split.samples[i].mask);  // masks survive 8-bit exactly
    CHECK(loaded.samples[i].prompt == split.samples[i].prompt);
    // images survive up to 8-bit quantization
    double max_err = 0.0;
    for (std::size_t k = 0; k < split.samples[i].image_t1.numel(); ++k)
      max_err = std::max(max_err,
                         std::abs(loaded.samples[i].image_t1[k] - split.samples[i].image_t1[k]));
    CHECK(max_err <= 0.5 / 255.0 + 1e-12);
  }
}

TEST_CASE("label binarization thresholds at 128") {
  const fs::path dir = fresh_dir("binarize");
  for (const char* sub : {"A", "B", "label", "list"}) fs::create_directories(dir / sub);
  RgbImage img;
  img.height = img.width = 32;
  img.pixels.assign(32 * 32 * 3, 100);
  write_rgb_png((dir / "A" / "x.png").string(), img);
  write_rgb_png((dir / "B" / "x.png").string(), img);
  GrayImage label;
  label.height = label.width = 32;
  label.pixels.assign(32 * 32, 0);
  label.pixels[0] = 127;
  label.pixels[1] = 128;
  label.pixels[2] = 255;
  write_gray_png((dir / "label" / "x.png").string(), label);
  std::ofstream(dir / "list" / "train.txt") << "x.png\n";
  auto split = load_dataset(dir.string(), "train");
  REQUIRE(split.samples.size() == 1);
  CHECK(split.samples[0].mask[0] == 0.0);
  CHECK(split.samples[0].mask[1] == 1.0);
  CHECK(split.samples[0].mask[2] == 1.0);
  CHECK(split.samples[0].prompt == std::nullopt);
}

TEST_CASE("loader error contracts") {
  const fs::path dir = fresh_dir("load_errs");
  CHECK_THROWS_AS(load_dataset(dir.string(), "train"), LoadError);  // no A/B/label

  for (const char* sub : {"A", "B", "label", "list"}) fs::create_directories(dir / sub);
  CHECK_THROWS_AS(load_dataset(dir.string(), "train"), LoadError);  // no list file

  std::ofstream(dir / "list" / "train.txt") << "x.png\n";
  try {
    load_dataset(dir.string(), "train");
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("A/x.png") != std::string::npos);
  }

  // size mismatch between A and B -> ValidationError naming the id
  RgbImage a, b;
  a.height = a.width = 32;
  a.pixels.assign(32 * 32 * 3, 10);
  b.height = 32;
  b.width = 64;
  b.pixels.assign(32 * 64 * 3, 10);
  GrayImage label;
  label.height = label.width = 32;
  label.pixels.assign(32 * 32, 0);
  write_rgb_png((dir / "A" / "x.png").string(), a);
  write_rgb_png((dir / "B" / "x.png").string(), b);
  write_gray_png((dir / "label" / "x.png").string(), label);
  try {
    load_dataset(dir.string(), "train");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("x") != std::string::npos);
  }

  // non-divisible-by-32 dimensions -> ValidationError
  const fs::path dir2 = fresh_dir("load_err_dims");
  for (const char* sub : {"A", "B", "label", "list"}) fs::create_directories(dir2 / sub);
  RgbImage odd;
  odd.height = odd.width = 48;
  odd.pixels.assign(48 * 48 * 3, 10);
  GrayImage oddl;
  oddl.height = oddl.width = 48;
  oddl.pixels.assign(48 * 48, 0);
  write_rgb_png((dir2 / "A" / "y.png").string(), odd);
  write_rgb_png((dir2 / "B" / "y.png").string(), odd);
  write_gray_png((dir2 / "label" / "y.png").string(), oddl);
  std::ofstream(dir2 / "list" / "train.txt") << "y.png\n";
  CHECK_THROWS_AS(load_dataset(dir2.string(), "train"), ValidationError);

  // duplicate ids -> ValidationError
  const fs::path dir3 = fresh_dir("load_err_dup");
  for (const char* sub : {"A", "B", "label", "list"}) fs::create_directories(dir3 / sub);
  write_rgb_png((dir3 / "A" / "z.png").string(), a);
  write_rgb_png((dir3 / "B" / "z.png").string(), a);
  write_gray_png((dir3 / "label" / "z.png").string(), label);
  std::ofstream(dir3 / "list" / "train.txt") << "z.png\nz.png\n";
  CHECK_THROWS_AS(load_dataset(dir3.string(), "train"), ValidationError);
}
