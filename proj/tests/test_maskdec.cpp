#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "segchange/errors.hpp"
#include "segchange/maskdec.hpp"
#include "testutil.hpp"

using namespace segchange;
using testutil::random_tensor;
namespace ad = segchange::ad;

namespace {

TextEmbedding make_text(Rng& rng, int l, int d, int vl) {
  TextEmbedding e;
  e.vectors = Tensor({l, d});
  e.valid_length = vl;
  for (int i = 0; i < vl; ++i)
    for (int j = 0; j < d; ++j) e.vectors.at(i, j) = rng.gaussian();
  return e;
}

}  // namespace

TEST_CASE("d_project: absent text and zero valid_length are the identity") {
  ParamRegistry params(1);
  MaskDecoder dec(8, 6, 4, 2, /*with_text=*/true, params, "dec.");
  Rng rng(2);
  auto map = ad::constant(random_tensor({8, 4, 4}, rng));
  CHECK(dec.d_project(map, std::nullopt)->value == map->value);

  TextEmbedding empty;
  empty.vectors = Tensor({3, 6});
  empty.valid_length = 0;
  CHECK(dec.d_project(map, empty)->value == map->value);

  auto text = make_text(rng, 3, 6, 2);
  CHECK(dec.d_project(map, text)->value != map->value);

  ParamRegistry params2(1);
  MaskDecoder no_text(8, 6, 4, 2, /*with_text=*/false, params2, "dec.");
  CHECK_THROWS_AS(no_text.d_project(map, text), ContractError);
}

TEST_CASE("d_project single text token: readout equals its value projection everywhere") {
  ParamRegistry params(3);
  MaskDecoder dec(4, 5, 2, 1, true, params, "dec.");
  Rng rng(4);
  auto map = ad::constant(random_tensor({4, 2, 2}, rng));
  auto text = make_text(rng, 4, 5, 1);
  auto out = dec.d_project(map, text);

  // with one valid key the attention weight is exactly 1, so readout =
  // W_o (W_v a + b_v) + b_o with a the adapted token
  const auto& aw = params.find("dec.text_adapter.weight")->value;
  const auto& ab = params.find("dec.text_adapter.bias")->value;
  const auto& wv = params.find("dec.dproj.wv")->value;
  const auto& bv = params.find("dec.dproj.bv")->value;
  const auto& wo = params.find("dec.dproj.wo")->value;
  const auto& bo = params.find("dec.dproj.bo")->value;
  double adapted[4];
  for (int o = 0; o < 4; ++o) {
    adapted[o] = ab[static_cast<std::size_t>(o)];
    for (int c = 0; c < 5; ++c) adapted[o] += aw.at(o, c) * text.vectors.at(0, c);
  }
  double value_proj[4];
  for (int o = 0; o < 4; ++o) {
    value_proj[o] = bv[static_cast<std::size_t>(o)];
    for (int c = 0; c < 4; ++c) value_proj[o] += wv.at(o, c) * adapted[c];
  }
  double readout[4];
  for (int o = 0; o < 4; ++o) {
    readout[o] = bo[static_cast<std::size_t>(o)];
    for (int c = 0; c < 4; ++c) readout[o] += wo.at(o, c) * value_proj[c];
  }
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        CHECK(out->value.at(c, y, x) ==
              doctest::Approx(map->value.at(c, y, x) + readout[c]).epsilon(1e-12));
}

TEST_CASE("decode with zeroed value projections changes queries only via feed-forward") {
  ParamRegistry params(5);
  MaskDecoder dec(6, 4, 3, 1, false, params, "dec.");
  for (const char* attn : {"self", "cross"}) {
    params.find("dec.layer0." + std::string(attn) + ".wv")->value.fill(0.0);
    params.find("dec.layer0." + std::string(attn) + ".bv")->value.fill(0.0);
  }
  Rng rng(6);
  auto map = ad::constant(random_tensor({6, 2, 2}, rng));
  Tensor q0 = random_tensor({3, 6}, rng);
  auto [refined, map_out] = dec.decode(map, ad::constant(q0));
  CHECK(map_out->value == map->value);

  // expected: q + FFN(LN3(q)) with the module's own parameters
  auto ln = ad::layernorm_rows(ad::constant(q0), params.find("dec.layer0.ln3.gain"),
                               params.find("dec.layer0.ln3.bias"));
  auto ffn = ad::linear(
      ad::relu(ad::linear(ln, params.find("dec.layer0.ffn.w1"), params.find("dec.layer0.ffn.b1"))),
      params.find("dec.layer0.ffn.w2"), params.find("dec.layer0.ffn.b2"));
  auto expect = ad::add(ad::constant(q0), ffn);
  for (std::size_t i = 0; i < expect->value.numel(); ++i)
    CHECK(refined->value[i] == doctest::Approx(expect->value[i]).epsilon(1e-12));
}

TEST_CASE("decode is query-permutation equivariant and deterministic") {
  ParamRegistry params(7);
  MaskDecoder dec(6, 4, 5, 2, false, params, "dec.");
  Rng rng(8);
  auto map = ad::constant(random_tensor({6, 2, 2}, rng));
  Tensor q = random_tensor({5, 6}, rng);
  std::vector<int> perm(5);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = 4; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
  Tensor qp({5, 6});
  for (int i = 0; i < 5; ++i)
    for (int c = 0; c < 6; ++c) qp.at(i, c) = q.at(perm[static_cast<std::size_t>(i)], c);

  auto [r1, m1] = dec.decode(map, ad::constant(q));
  auto [r2, m2] = dec.decode(map, ad::constant(qp));
  for (int i = 0; i < 5; ++i)
    for (int c = 0; c < 6; ++c)
      CHECK(std::abs(r2->value.at(i, c) - r1->value.at(perm[static_cast<std::size_t>(i)], c)) <
            1e-9);

  auto [r3, m3] = dec.decode(map, ad::constant(q));
  CHECK(r3->value == r1->value);
}

TEST_CASE("predict_mask: zero queries reduce to the refined constant map") {
  ParamRegistry params(9);
  MaskDecoder dec(6, 4, 3, 1, false, params, "dec.");
  Rng rng(10);
  auto map = ad::constant(random_tensor({6, 4, 4}, rng));
  auto logits = dec.predict_mask(ad::constant(Tensor({3, 6})), map);
  CHECK(logits->value.shape() == std::vector<int>{16, 16});
  CHECK(logits->value.all_finite());
  // all per-query logits are zero
  auto pq = dec.query_logits(ad::constant(Tensor({3, 6})), map);
  for (std::size_t i = 0; i < pq->value.numel(); ++i) CHECK(pq->value[i] == 0.0);
}

TEST_CASE("predict_mask: single query equals the max reduction of itself") {
  ParamRegistry params(11);
  MaskDecoder dec(6, 4, 1, 1, false, params, "dec.");
  Rng rng(12);
  auto map = ad::constant(random_tensor({6, 4, 4}, rng));
  Tensor q = random_tensor({1, 6}, rng);
  auto pq = dec.query_logits(ad::constant(q), map);
  auto combined = ad::colwise_max(pq);
  for (std::size_t i = 0; i < combined->value.numel(); ++i)
    CHECK(combined->value[i] == pq->value[i]);
}

TEST_CASE("predict_mask output is full input resolution") {
  ParamRegistry params(13);
  MaskDecoder dec(8, 4, 4, 2, false, params, "dec.");
  Rng rng(14);
  // stride-4 map of a 64x32 input
  auto map = ad::constant(random_tensor({8, 16, 8}, rng));
  auto logits = dec.forward_logits(map, std::nullopt);
  CHECK(logits->value.shape() == std::vector<int>{64, 32});
}

TEST_CASE("text-off equivalence: same seed with and without text pathway") {
  ParamRegistry with_text(21);
  MaskDecoder a(8, 6, 4, 2, true, with_text, "dec.");
  ParamRegistry without_text(21);
  MaskDecoder b(8, 6, 4, 2, false, without_text, "dec.");
  Rng rng(22);
  Tensor map = random_tensor({8, 4, 4}, rng);
  auto la = a.forward_logits(ad::constant(map), std::nullopt);
  auto lb = b.forward_logits(ad::constant(map), std::nullopt);
  CHECK(la->value == lb->value);  // bit-identical: shared names share init streams
}

TEST_CASE("binarize: boundary, extremes, monotone sweep") {
  Tensor logits({2, 2});
  logits[0] = 0.0;
  logits[1] = -10.0;
  logits[2] = 10.0;
  logits[3] = 0.2;
  auto pred = binarize(logits, 0.5);
  CHECK(pred[0] == 1.0);  // sigmoid(0)=0.5, boundary counts positive
  CHECK(pred[1] == 0.0);
  CHECK(pred[2] == 1.0);
  CHECK(pred[3] == 1.0);

  CHECK_THROWS_AS(binarize(logits, 0.0), ValidationError);
  CHECK_THROWS_AS(binarize(logits, 1.0), ValidationError);

  Rng rng(23);
  Tensor rand_logits = random_tensor({16, 16}, rng, 2.0);
  Tensor prev = binarize(rand_logits, 0.05);
  for (int k = 1; k <= 10; ++k) {
    Tensor cur = binarize(rand_logits, 0.05 + 0.09 * k);
    for (std::size_t i = 0; i < cur.numel(); ++i) CHECK(cur[i] <= prev[i]);
    prev = cur;
  }
}

TEST_CASE("decoder parameters pass finite differences end to end") {
  ParamRegistry params(31);
  MaskDecoder dec(4, 3, 2, 1, true, params, "dec.");  // 16x16 logits, d_f=4, N_q=2
  Rng rng(32);
  Tensor map = random_tensor({4, 4, 4}, rng);
  auto text = make_text(rng, 3, 3, 2);
  Tensor probe = random_tensor({16, 16}, rng);
  auto res = testutil::check_params_fd(
      [&] {
        return ad::sum(
            ad::mul(dec.forward_logits(ad::constant(map), text), ad::constant(probe)));
      },
      params.entries());
  CHECK_MESSAGE(res.ok, res.detail);
  MESSAGE("worst rel err: ", res.worst);
}
