#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "segchange/backbone.hpp"
#include "segchange/errors.hpp"
#include "testutil.hpp"

using namespace segchange;
using testutil::random_tensor;
namespace ad = segchange::ad;

TEST_CASE("registry: builtin tiny, duplicates, lookups") {
  auto spec = backbone_spec("tiny");
  CHECK(spec.channels == std::array<int, 4>{8, 16, 32, 64});

  BackboneSpec custom{.name = "tiny_test_dup", .channels = {2, 4, 6, 8}};
  register_backbone(custom, [](const BackboneSpec& s, ParamRegistry& p,
                               const std::string& prefix) {
    return make_encoder(BackboneSpec{.name = "tiny", .channels = s.channels}, p, prefix);
  });
  CHECK(backbone_spec("tiny_test_dup").channels == std::array<int, 4>{2, 4, 6, 8});
  CHECK_THROWS_AS(register_backbone(custom, nullptr), RegistryError);
  CHECK_THROWS_AS(backbone_spec("absent"), RegistryError);
  ParamRegistry scratch(0);
  CHECK_THROWS_AS(make_encoder(BackboneSpec{.name = "absent"}, scratch, ""), RegistryError);
}

TEST_CASE("pyramid shapes follow stride arithmetic") {
  ParamRegistry params(1);
  BackboneSpec spec{.name = "tiny", .channels = {8, 16, 32, 64}};
  auto enc = make_encoder(spec, params, "backbone.");
  Rng rng(2);
  auto pyr = enc->encode(random_tensor({3, 64, 64}, rng, 0.3));
  CHECK(pyr.levels[0]->value.shape() == std::vector<int>{8, 16, 16});
  CHECK(pyr.levels[1]->value.shape() == std::vector<int>{16, 8, 8});
  CHECK(pyr.levels[2]->value.shape() == std::vector<int>{32, 4, 4});
  CHECK(pyr.levels[3]->value.shape() == std::vector<int>{64, 2, 2});

  CHECK_THROWS_AS(enc->encode(random_tensor({3, 48, 64}, rng)), ShapeError);
}

TEST_CASE("siamese determinism: equal inputs give equal pyramids") {
  ParamRegistry params(3);
  auto enc = make_encoder(backbone_spec("tiny"), params, "backbone.");
  Rng rng(4);
  Tensor img = random_tensor({3, 64, 64}, rng, 0.3);
  auto p1 = enc->encode(img);
  auto p2 = enc->encode(img);
  for (int l = 0; l < 4; ++l) CHECK(p1.levels[l]->value == p2.levels[l]->value);
}

TEST_CASE("swapping inputs permutes outputs with no other change") {
  ParamRegistry params(5);
  auto enc = make_encoder(backbone_spec("tiny"), params, "backbone.");
  Rng rng(6);
  Tensor a = random_tensor({3, 64, 64}, rng, 0.3);
  Tensor b = random_tensor({3, 64, 64}, rng, 0.3);
  auto pa1 = enc->encode(a), pb1 = enc->encode(b);
  auto pb2 = enc->encode(b), pa2 = enc->encode(a);
  for (int l = 0; l < 4; ++l) {
    CHECK(pa1.levels[l]->value == pa2.levels[l]->value);
    CHECK(pb1.levels[l]->value == pb2.levels[l]->value);
  }
}

TEST_CASE("zero image with zero biases propagates to all-zero pyramid") {
  ParamRegistry params(7);
  auto enc = make_encoder(backbone_spec("tiny"), params, "backbone.");
  // conv and norm biases start at zero; a zero image then normalizes to zero
  // at every stage
  Tensor img({3, 64, 64});
  auto pyr = enc->encode(img);
  for (int l = 0; l < 4; ++l) {
    CHECK(pyr.levels[l]->value.all_finite());
    for (std::size_t i = 0; i < pyr.levels[l]->value.numel(); ++i)
      CHECK(pyr.levels[l]->value[i] == 0.0);
  }
}

TEST_CASE("tiny backbone gradients match finite differences (<=5k params)") {
  ParamRegistry params(11);
  BackboneSpec spec{.name = "tiny", .channels = {4, 6, 8, 10}};
  auto enc = make_encoder(spec, params, "backbone.");
  CHECK(params.total_elements() <= 5000);
  Rng rng(12);
  Tensor img = random_tensor({3, 32, 32}, rng, 0.5);
  // random probes make every level contribute to the scalar
  std::array<Tensor, 4> probes = {
      random_tensor({4, 8, 8}, rng), random_tensor({6, 4, 4}, rng),
      random_tensor({8, 2, 2}, rng), random_tensor({10, 1, 1}, rng)};
  auto build_loss = [&]() {
    auto pyr = enc->encode(img);
    ad::Var loss;
    for (int l = 0; l < 4; ++l) {
      auto term = ad::sum(ad::mul(pyr.levels[l], ad::constant(probes[l])));
      loss = l == 0 ? term : ad::add(loss, term);
    }
    return loss;
  };
  auto res = testutil::check_params_fd(build_loss, params.entries());
  CHECK_MESSAGE(res.ok, res.detail);
  MESSAGE("worst relative error: ", res.worst);
}
