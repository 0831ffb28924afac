#include <doctest.h>

#include <cmath>

#include <flr/errors.hpp>
#include <flr/gradcheck.hpp>
#include <flr/transformer.hpp>

#include "support/helpers.hpp"

using namespace flr;
using flr::testing::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 40;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 24;
  return c;
}

std::vector<TokenId> tokens(std::initializer_list<TokenId> ids) { return ids; }

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = tiny_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.d_model = 18;
  c.n_heads = 2;  // head dim 9 is odd
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("encode shapes and length limit") {
  Rng rng(1);
  const Backbone model(tiny_config(), rng);
  const Tensor h = model.encode(model.embed(tokens({3})));
  CHECK(h.rows() == 1);
  CHECK(h.cols() == 16);

  std::vector<TokenId> long_seq(25, 1);
  CHECK_THROWS_AS(model.encode(model.embed(long_seq)), LengthError);
}

TEST_CASE("causality: future tokens never change earlier hidden states") {
  Rng rng(2);
  const Backbone model(tiny_config(), rng);
  const auto a = tokens({5, 6, 7, 8, 9, 10});
  const auto b = tokens({5, 6, 7, 30, 2, 11});
  const Tensor ha = model.encode(model.embed(a));
  const Tensor hb = model.encode(model.embed(b));
  for (Index i = 0; i < 3; ++i) CHECK(ha.value().row(i) == hb.value().row(i));
  CHECK(ha.value().row(3) != hb.value().row(3));

  const Tensor la = model.next_token_logits(ha);
  const Tensor lb = model.next_token_logits(hb);
  for (Index i = 0; i < 3; ++i) CHECK(la.value().row(i) == lb.value().row(i));
}

TEST_CASE("encode is bit-identical for a fixed seed") {
  Rng r1(77), r2(77);
  const Backbone m1(tiny_config(), r1);
  const Backbone m2(tiny_config(), r2);
  const auto x = tokens({1, 2, 3, 4});
  CHECK(m1.encode(m1.embed(x)).value() == m2.encode(m2.embed(x)).value());
}

TEST_CASE("apply_rope examples") {
  Rng rng(3);
  const Tensor x = random_tensor(rng, 4, 8);
  const std::vector<Index> zeros{0, 0, 0, 0};
  CHECK(apply_rope(x, zeros, 10000.0).value() == x.value());

  const std::vector<Index> pos{0, 1, 5, 17};
  const Tensor y = apply_rope(x, pos, 10000.0);
  for (Index r = 0; r < 4; ++r) {
    for (Index i = 0; i < 4; ++i) {
      const double before = x.value().row(r).segment(2 * i, 2).norm();
      const double after = y.value().row(r).segment(2 * i, 2).norm();
      CHECK(std::abs(before - after) < 1e-9);
    }
    CHECK(std::abs(x.value().row(r).norm() - y.value().row(r).norm()) < 1e-9);
  }

  // d_head = 2 → the single pair rotates by pos · base^0 = pos.
  const std::vector<Index> one{1};
  const Tensor rotated = apply_rope(Tensor::matrix({{1.0, 0.0}}), one, 10000.0);
  CHECK(std::abs(rotated(0, 0) - std::cos(1.0)) < 1e-12);
  CHECK(std::abs(rotated(0, 1) - std::sin(1.0)) < 1e-12);

  CHECK_THROWS_AS(apply_rope(Tensor::zeros(1, 3), one, 10000.0), ConfigError);
}

TEST_CASE("rope scores depend only on relative position") {
  Rng rng(4);
  const Tensor q = random_tensor(rng, 1, 8);
  const Tensor k = random_tensor(rng, 1, 8);
  auto score = [&](Index p, Index s) {
    const std::vector<Index> pp{p}, ss{s};
    return matmul_nt(apply_rope(q, pp, 100.0), apply_rope(k, ss, 100.0)).item();
  };
  CHECK(std::abs(score(5, 2) - score(13, 10)) < 1e-9);
  CHECK(std::abs(score(0, 7) - score(20, 27)) < 1e-9);
  CHECK(std::abs(score(5, 2) - score(5, 3)) > 1e-6);
}

TEST_CASE("log-softmax rows of the logits are normalized") {
  Rng rng(5);
  const Backbone model(tiny_config(), rng);
  const Tensor logits = model.next_token_logits(model.encode(model.embed(tokens({1, 2, 3, 4, 5}))));
  CHECK(logits.rows() == 5);
  CHECK(logits.cols() == 40);
  const Tensor lp = log_softmax(logits);
  for (Index r = 0; r < lp.rows(); ++r) CHECK(std::abs(std::log(lp.value().row(r).array().exp().sum())) < 1e-9);
}

TEST_CASE("untrained cross-entropy is near ln(vocab)") {
  ModelConfig c;  // desk configuration
  Rng rng(6);
  const Backbone model(c, rng);
  std::vector<TokenId> seq;
  Rng pick_rng(60);
  for (int i = 0; i < 64; ++i) seq.push_back(static_cast<TokenId>(pick_rng.below(600)));
  const Tensor lp = log_softmax(model.next_token_logits(model.encode(model.embed(seq))));
  double ce = 0.0;
  for (Index t = 0; t + 1 < static_cast<Index>(seq.size()); ++t) ce -= lp(t, seq[static_cast<std::size_t>(t + 1)]);
  ce /= static_cast<double>(seq.size() - 1);
  CHECK(std::abs(ce - std::log(600.0)) < 0.1 * std::log(600.0));
}

TEST_CASE("forward passes are counted") {
  Rng rng(7);
  Backbone model(tiny_config(), rng);
  model.reset_forward_passes();
  model.encode(model.embed(tokens({1, 2})));
  model.encode(model.embed(tokens({1, 2, 3})));
  CHECK(model.forward_passes() == 2);
}

TEST_CASE("backbone gradients match finite differences") {
  ModelConfig c = tiny_config();
  c.d_model = 8;
  c.d_ff = 12;
  c.vocab_size = 10;
  Rng rng(8);
  Backbone model(c, rng);
  const auto seq = tokens({1, 4, 2, 7});
  for (const char* name : {"tok_emb", "layer0.wq", "layer1.w1", "layer0.attn_norm", "final_norm"}) {
    CAPTURE(name);
    Tensor& p = model.params().at(name);
    auto f = [&](std::span<const Tensor>) {
      const Tensor lp = log_softmax(model.next_token_logits(model.encode(model.embed(seq))));
      const std::vector<Index> next{4, 2, 7};
      return scale(sum(pick(row_slice(lp, 0, 3), next)), -1.0);
    };
    // The leaf is perturbed in place, so f ignores its argument.
    const auto result = check_gradients(f, {p});
    CHECK(result.max_relative_error < 1e-4);
  }
}
