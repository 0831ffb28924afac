#include <doctest.h>

#include <cmath>
#include <numbers>

#include <flr/errors.hpp>
#include <flr/gradcheck.hpp>
#include <flr/objectives.hpp>

#include "support/helpers.hpp"

using namespace flr;
using flr::testing::random_simplex_rows;
using flr::testing::random_tensor;

TEST_CASE("rec_loss examples") {
  const std::vector<TokenId> targets{0, 1};
  const Tensor perfect = Tensor::matrix({{0.0, -1000.0}, {-1000.0, 0.0}});
  CHECK(rec_loss(perfect, targets).item() == doctest::Approx(0.0));

  const Tensor uniform = Tensor::zeros(2, 7);
  CHECK(std::abs(rec_loss(uniform, targets).item() - std::log(7.0)) < 1e-12);

  const Tensor mixed = Tensor::matrix({{std::log(0.5), std::log(0.5)}, {std::log(0.75), std::log(0.25)}});
  CHECK(std::abs(rec_loss(mixed, targets).item() - (std::log(2.0) + std::log(4.0)) / 2.0) < 1e-12);
  CHECK(std::abs(rec_loss(mixed, targets).item() - 1.0397) < 1e-4);

  // Leading prompt rows are ignored.
  const Tensor padded = Tensor::matrix({{9.0, -9.0}, {std::log(0.5), std::log(0.5)}, {std::log(0.75), std::log(0.25)}});
  CHECK(rec_loss(padded, targets).item() == rec_loss(mixed, targets).item());

  CHECK_THROWS_AS(rec_loss(mixed, std::vector<TokenId>{}), ContractError);
}

TEST_CASE("orth_loss examples") {
  const Tensor orthonormal[] = {Tensor::matrix({{1, 0, 0}, {0, 0, 1}})};
  CHECK(orth_loss(orthonormal).item() == doctest::Approx(0.0));

  const Tensor identical[] = {Tensor::matrix({{0.6, 0.8}, {0.6, 0.8}, {0.6, 0.8}, {0.6, 0.8}})};
  CHECK(std::abs(orth_loss(identical).item() - 12.0) < 1e-9);

  const double c = std::cos(std::numbers::pi / 3.0), s = std::sin(std::numbers::pi / 3.0);
  const Tensor sixty[] = {Tensor::matrix({{1, 0}, {c, s}})};
  CHECK(std::abs(orth_loss(sixty).item() - 0.5) < 1e-12);

  const Tensor single[] = {Tensor::matrix({{3.0, -1.0}})};
  CHECK(orth_loss(single).item() == doctest::Approx(0.0));

  const Tensor zero_row[] = {Tensor::matrix({{1, 0}, {0, 0}})};
  CHECK_THROWS_AS(orth_loss(zero_row), ContractError);
}

TEST_CASE("orth_loss ignores row scale") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor f = random_tensor(rng, 3, 5);
    Matrix scaled = f.value();
    for (Index r = 0; r < 3; ++r) scaled.row(r) *= 0.1 + 5.0 * rng.uniform();
    const Tensor a[] = {f};
    const Tensor b[] = {Tensor(scaled)};
    CHECK(std::abs(orth_loss(a).item() - orth_loss(b).item()) < 1e-12);
  }
}

TEST_CASE("attn_div_loss examples") {
  const Tensor identical[] = {Tensor::matrix({{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}})};
  CHECK(std::abs(attn_div_loss(identical).item() - 1.0) < 1e-9);

  const Tensor disjoint[] = {Tensor::matrix({{0.5, 0.5, 0, 0}, {0, 0, 0.3, 0.7}})};
  CHECK(attn_div_loss(disjoint).item() == 0.0);

  const Tensor hand[] = {Tensor::matrix({{1.0, 0.0}, {0.5, 0.5}})};
  CHECK(std::abs(attn_div_loss(hand).item() - 1.0 / std::sqrt(2.0)) < 1e-12);

  const Tensor single[] = {Tensor::matrix({{0.5, 0.5}})};
  CHECK(attn_div_loss(single).item() == 0.0);
}

TEST_CASE("attn_div_loss stays in [0, 1]") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> batch;
    for (int b = 0; b < 3; ++b) batch.push_back(random_simplex_rows(rng, 4, 6));
    const double v = attn_div_loss(batch).item();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-12);
  }
}

TEST_CASE("sparsity_loss examples and bounds") {
  const Tensor one_hot[] = {Tensor::matrix({{0, 1, 0, 0}})};
  CHECK(std::abs(sparsity_loss(one_hot).item()) < 1e-6);

  const Tensor uniform[] = {Tensor::matrix({{0.25, 0.25, 0.25, 0.25}})};
  CHECK(std::abs(sparsity_loss(uniform).item() - std::log(4.0)) < 1e-9);

  const Tensor single[] = {Tensor::matrix({{1.0}})};
  CHECK(std::abs(sparsity_loss(single).item()) < 1e-9);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor g[] = {random_simplex_rows(rng, 1, 5)};
    const double v = sparsity_loss(g).item();
    CHECK(v >= 0.0);
    CHECK(v <= std::log(5.0) + 1e-9);
  }
}

TEST_CASE("combine examples") {
  RegWeights w;
  for (std::size_t i = 0; i < 3; ++i) CHECK(w.lambda(i) == 0.5);

  const Tensor zero = Tensor::scalar(0.0);
  const Tensor rec = Tensor::scalar(1.25);
  CHECK(combine(rec, zero, zero, zero, w).item() == 1.25);

  w.params().at("loss.s_orth").mutable_value()(0, 0) = std::log(2.0);
  const double total = combine(zero, Tensor::scalar(2.0), zero, zero, w).item();
  CHECK(std::abs(total - (0.5 + std::log(2.0) / 2.0)) < 1e-12);
  CHECK(std::abs(total - 0.8466) < 1e-4);

  CHECK_THROWS_AS(combine(Tensor::scalar(std::nan("")), zero, zero, zero, w), NumericError);

  // Undefined terms are switched off entirely.
  CHECK(combine(rec, Tensor{}, Tensor{}, Tensor{}, w).item() == 1.25);
}

TEST_CASE("combine: d total / d s_i = -lambda_i L_i + 1/2") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    RegWeights w;
    for (std::size_t i = 0; i < 3; ++i) w.params().begin()[static_cast<long>(i)].second.mutable_value()(0, 0) = rng.normal();
    const double terms[3] = {3.0 * rng.uniform(), rng.uniform(), 2.0 * rng.uniform()};
    combine(Tensor::scalar(0.7), Tensor::scalar(terms[0]), Tensor::scalar(terms[1]), Tensor::scalar(terms[2]), w)
        .backward();
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(w.s(i).grad()(0, 0) - (-w.lambda(i) * terms[i] + 0.5)) < 1e-12);
    }
  }
  // At λ L = 1/2 the weight is stationary.
  RegWeights w;
  const double l = 3.0;
  w.params().at("loss.s_div").mutable_value()(0, 0) = std::log(l);  // λ = 1/(2l)
  combine(Tensor::scalar(0.0), Tensor{}, Tensor::scalar(l), Tensor{}, w).backward();
  CHECK(std::abs(w.s(1).grad()(0, 0)) < 1e-12);
}

TEST_CASE("fixed lambdas override the learned weights") {
  RegWeights w;
  w.fix_lambdas({0.1, 0.2, 0.3});
  CHECK(std::abs(w.lambda(0) - 0.1) < 1e-12);
  CHECK(std::abs(w.lambda(2) - 0.3) < 1e-12);
  CHECK_FALSE(w.s(0).requires_grad());
}

TEST_CASE("all losses pass the finite-difference check") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Index b = 1 + static_cast<Index>(rng.below(3));
    const Index k = 2 + static_cast<Index>(rng.below(3));
    const Index d = 2 + static_cast<Index>(rng.below(5));
    std::vector<Tensor> f, a, g;
    for (Index i = 0; i < b; ++i) {
      f.push_back(random_tensor(rng, k, d));
      a.push_back(random_simplex_rows(rng, k, d + 1));
      g.push_back(random_simplex_rows(rng, 1, k));
    }
    CHECK(check_gradients([](auto t) { return orth_loss(t); }, f).max_relative_error < 1e-4);
    CHECK(check_gradients([](auto t) { return attn_div_loss(t); }, a).max_relative_error < 1e-4);
    CHECK(check_gradients([](auto t) { return sparsity_loss(t); }, g).max_relative_error < 1e-4);
    const Tensor logits = random_tensor(rng, 4, 6);
    const std::vector<TokenId> targets{1, 5, 0};
    CHECK(check_gradients([&](auto t) { return rec_loss(t[0], targets); }, {logits}).max_relative_error < 1e-4);
    RegWeights w;
    std::vector<Tensor> all{Tensor::scalar(rng.uniform()), Tensor::scalar(rng.uniform()),
                            Tensor::scalar(rng.uniform()), Tensor::scalar(rng.uniform())};
    for (const auto& [name, s] : w.params()) all.push_back(s);
    CHECK(check_gradients([&](auto t) { return combine(t[0], t[1], t[2], t[3], w); }, all).max_relative_error <
          1e-4);
  }
}
