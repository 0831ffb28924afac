#include <doctest.h>

#include "flr/errors.hpp"
#include "flr/gradcheck.hpp"
#include "flr/optim.hpp"
#include "flr/recommender.hpp"

using namespace flr;

namespace {

ModelConfig tiny_model(Index d = 16) {
  ModelConfig c;
  c.vocab_size = 30;
  c.d_model = d;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 2 * d;
  c.max_seq_len = 32;
  return c;
}

}  // namespace

TEST_CASE("teacher-forced log-probs match step-by-step scoring") {
  for (Index n_iters : {0, 1, 2}) {
    CAPTURE(n_iters);
    Rng rng(3);
    Recommender rec(tiny_model(), FlrConfig{}, n_iters, rng);
    const std::vector<TokenId> prompt{1, 8, 9, 2, 10, 3};
    const std::vector<TokenId> response{11, 12, 5};
    const auto ctx = rec.reason(prompt);
    CHECK(ctx.length() == static_cast<Index>(prompt.size()) + (n_iters > 0 ? 1 : 0));
    CHECK(ctx.reasoning_passes == static_cast<std::uint64_t>(n_iters));
    const Tensor lp = rec.response_log_probs(ctx, response);
    REQUIRE(lp.size() == 3);
    for (std::size_t t = 0; t < response.size(); ++t) {
      const Vector next = rec.next_token_log_probs(ctx, std::span(response).first(t));
      CHECK(next.array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(std::abs(next(response[t]) - lp(0, static_cast<Index>(t))) < 1e-12);
    }
  }
}

TEST_CASE("thought noise moves only the thought row") {
  Rng rng(4);
  Recommender rec(tiny_model(), FlrConfig{}, 2, rng);
  const std::vector<TokenId> prompt{1, 8, 3};
  const Tensor zero(Matrix::Zero(1, 16));
  const Tensor eps = gaussian_sample(rng, 1, 16, 0.05);
  const auto plain = rec.reason(prompt);
  const auto same = rec.reason(prompt, &zero);
  const auto noisy = rec.reason(prompt, &eps);
  CHECK(plain.embeddings.value() == same.embeddings.value());
  const Index pos = plain.trace.thought_position;
  CHECK(noisy.embeddings.value().topRows(pos) == plain.embeddings.value().topRows(pos));
  CHECK((noisy.embeddings.value().row(pos) - plain.embeddings.value().row(pos) - eps.value()).norm() < 1e-15);

  Recommender none(tiny_model(), FlrConfig{}, 0, rng);
  CHECK_THROWS_AS(none.reason(prompt, &eps), ContractError);
  CHECK_THROWS_AS(none.set_n_iters(2), ConfigError);
}

TEST_CASE("copies are independent") {
  Rng rng(5);
  Recommender rec(tiny_model(), FlrConfig{}, 1, rng);
  Recommender copy(rec);
  const auto before = rec.all_params().checksum();
  copy.flr().params().at("flr.q_f").mutable_value()(0, 0) += 1.0;
  copy.backbone().params().at("tok_emb").mutable_value()(0, 0) += 1.0;
  CHECK(rec.all_params().checksum() == before);
  CHECK(copy.all_params().checksum() != before);
  CHECK(rec.all_params().size() == rec.backbone().params().size() + rec.flr().params().size());
}

TEST_CASE("response loss gradient through the full reasoning path") {
  Rng rng(6);
  ModelConfig mc = tiny_model(8);
  mc.d_ff = 8;
  Recommender rec(mc, FlrConfig{2, 2, 4}, 2, rng);
  const std::vector<TokenId> prompt{1, 7, 3};
  const std::vector<TokenId> response{9, 5};
  auto f = [&](std::span<const Tensor>) { return sum(rec.response_log_probs(rec.reason(prompt), response)); };
  for (auto& [name, t] : rec.all_params()) {
    CAPTURE(name);
    CHECK(check_gradients(f, {t}).max_relative_error < 1e-4);
  }
}

TEST_CASE("prompt fitting keeps the most recent items") {
  auto tok = data::Tokenizer::build(std::vector<std::string>{"a b", "c d", "e f"});
  data::Catalog catalog({{0, 0, "a b", tok.encode("a b"), {}},
                         {1, 1, "c d", tok.encode("c d"), {}},
                         {2, 2, "e f", tok.encode("e f"), {}}});
  const std::vector<data::ItemId> history{0, 1, 2};
  CHECK(fit_prompt(history, catalog, 100).size() == 1 + 2 + 1 + 2 + 1 + 2 + 1);
  const auto fit = fit_prompt(history, catalog, 7);
  CHECK(fit == data::to_prompt(std::span(history).last(2), catalog));
  CHECK_THROWS_AS(fit_prompt(history, catalog, 1), LengthError);
}

TEST_CASE("AdamW first step moves each coordinate by lr against the gradient sign") {
  ParamSet ps;
  ps.add("w", Tensor(Matrix{{1.0, -2.0, 0.5}}, true));
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.max_grad_norm = 0.0;
  AdamW opt(ps, cfg);
  Tensor loss = sum(square(ps.at("w")));
  loss.backward();
  opt.step();
  const Matrix& w = ps.at("w").value();
  CHECK(w(0, 0) == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(w(0, 1) == doctest::Approx(-1.99).epsilon(1e-6));
  CHECK(w(0, 2) == doctest::Approx(0.49).epsilon(1e-6));

  // A few hundred steps drive a quadratic to its minimum.
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    sum(square(ps.at("w"))).backward();
    opt.step();
  }
  CHECK(ps.at("w").value().norm() < 0.05);
}

TEST_CASE("AdamW clips the global gradient norm") {
  ParamSet ps;
  ps.add("w", Tensor(Matrix{{3.0, 4.0}}, true));
  AdamW opt(ps, AdamWConfig{});
  scale(sum(ps.at("w")), 10.0).backward();
  CHECK(opt.step() == doctest::Approx(std::sqrt(200.0)));
}
