#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "segchange/errors.hpp"
#include "segchange/metrics.hpp"
#include "testutil.hpp"

using namespace segchange;
using testutil::random_binary;
using testutil::random_tensor;
namespace ad = segchange::ad;

TEST_CASE("confusion: hand-enumerated 2x2 grid and degenerate cases") {
  Tensor pred({2, 2}), gt({2, 2});
  pred[0] = 1;
  pred[3] = 1;
  gt[0] = 1;
  gt[1] = 1;
  auto c = confusion(pred, gt);
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.tn == 1);

  auto same = confusion(gt, gt);
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);

  Tensor inv({2, 2});
  for (std::size_t i = 0; i < 4; ++i) inv[i] = 1.0 - gt[i];
  auto disj = confusion(inv, gt);
  CHECK(disj.tp == 0);
  CHECK(disj.tn == 0);

  Tensor bad({2, 2});
  bad[0] = 0.5;
  CHECK_THROWS_AS(confusion(bad, gt), ValidationError);
  CHECK_THROWS_AS(confusion(Tensor({2, 3}), gt), ShapeError);
}

TEST_CASE("report: hand case, conventions, all-correct") {
  auto r = report(Confusion{1, 1, 1, 1});
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 0.5);
  CHECK(r.f1 == 0.5);
  CHECK(r.iou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(r.oa == 0.5);

  auto perfect = report(Confusion{4, 0, 0, 12});
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.iou == 1.0);
  CHECK(perfect.oa == 1.0);

  auto empty_pos = report(Confusion{0, 0, 0, 4});
  CHECK(empty_pos.precision == 0.0);  // 0/0 convention
  CHECK(empty_pos.recall == 0.0);
  CHECK(empty_pos.f1 == 0.0);
  CHECK(empty_pos.iou == 0.0);
  CHECK(empty_pos.oa == 1.0);

  CHECK_THROWS_AS(report(Confusion{}), EmptyEvalError);
}

TEST_CASE("f1 equals 2*iou/(1+iou) whenever tp > 0") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Confusion c{1 + static_cast<std::uint64_t>(rng.uniform_int(0, 50)),
                static_cast<std::uint64_t>(rng.uniform_int(0, 50)),
                static_cast<std::uint64_t>(rng.uniform_int(0, 50)),
                static_cast<std::uint64_t>(rng.uniform_int(0, 50))};
    auto r = report(c);
    CHECK(std::abs(r.f1 - 2.0 * r.iou / (1.0 + r.iou)) < 1e-12);
    CHECK(r.iou <= r.f1 + 1e-15);
  }
}

TEST_CASE("sharded confusion sums equal the global count") {
  Rng rng(6);
  Tensor pred = random_binary({32, 32}, rng), gt = random_binary({32, 32}, rng);
  auto whole = confusion(pred, gt);
  // shard by rows into 4 pieces
  Confusion acc;
  for (int s = 0; s < 4; ++s) {
    Tensor ps({8, 32}), gs({8, 32});
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 32; ++x) {
        ps.at(y, x) = pred.at(s * 8 + y, x);
        gs.at(y, x) = gt.at(s * 8 + y, x);
      }
    acc += confusion(ps, gs);
  }
  CHECK(acc == whole);
  auto ra = report(acc), rw = report(whole);
  CHECK(ra.f1 == rw.f1);
  CHECK(ra.iou == rw.iou);
  CHECK(ra.oa == rw.oa);
}

TEST_CASE("loss: confident correct predictions drive it below 0.01") {
  Rng rng(7);
  Tensor mask = random_binary({8, 8}, rng);
  Tensor logits({8, 8});
  for (std::size_t i = 0; i < mask.numel(); ++i) logits[i] = mask[i] == 1.0 ? 10.0 : -10.0;
  auto l = loss(ad::constant(logits), mask);
  CHECK(l->value[0] < 0.01);
  CHECK(l->value[0] > 0.0);
}

TEST_CASE("loss: closed form at zero logits on an all-zero mask") {
  Tensor mask({4, 4});
  Tensor logits({4, 4});
  auto l = loss(ad::constant(logits), mask);
  // BCE = ln 2 per pixel; p = 0.5 everywhere so dice = 1 - 1/(8+1)
  const double expect = std::log(2.0) + (1.0 - 1.0 / 9.0);
  CHECK(l->value[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss is invariant under a shared spatial permutation") {
  Rng rng(8);
  Tensor mask = random_binary({4, 4}, rng);
  Tensor logits = random_tensor({4, 4}, rng);
  // reverse both in the same way
  Tensor mp({4, 4}), lp({4, 4});
  for (std::size_t i = 0; i < 16; ++i) {
    mp[i] = mask[15 - i];
    lp[i] = logits[15 - i];
  }
  auto a = loss(ad::constant(logits), mask);
  auto b = loss(ad::constant(lp), mp);
  CHECK(a->value[0] == doctest::Approx(b->value[0]).epsilon(1e-15));
}

TEST_CASE("loss stays finite at extreme logits") {
  Tensor mask({2, 2});
  mask[0] = 1.0;
  Tensor logits = Tensor::full({2, 2}, 745.0);  // exp(-745) underflows, log1p is safe
  logits[1] = -745.0;
  auto l = loss(ad::constant(logits), mask);
  CHECK(std::isfinite(l->value[0]));
}

TEST_CASE("loss gradients on 4x4 instances") {
  Rng rng(9);
  Tensor mask = random_binary({4, 4}, rng);
  auto res = testutil::check_gradients(
      [mask](const std::vector<ad::Var>& v) { return loss(v[0], mask); },
      {random_tensor({4, 4}, rng)});
  CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("report serializes to the documented JSON shape") {
  auto js = report_to_json(report(Confusion{1, 1, 1, 1}));
  CHECK(js.find("\"tp\": 1") != std::string::npos);
  CHECK(js.find("\"f1\": 0.500000") != std::string::npos);
  CHECK(js.find("\"iou\": 0.333333") != std::string::npos);
}
