#include <doctest.h>

#include <cmath>

#include "sftmix/errors.hpp"
#include "sftmix/finite_diff.hpp"
#include "sftmix/model.hpp"
#include "sftmix/rng.hpp"
#include "support/test_util.hpp"

using namespace sftmix;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 10;
  c.init_seed = 42;
  return c;
}

std::vector<int> random_tokens(int n, int vocab, SeededRng& rng) {
  std::vector<int> t(n);
  for (auto& x : t) x = static_cast<int>(rng.below(vocab));
  return t;
}

}  // namespace

TEST_CASE("init is deterministic and validates config") {
  ModelConfig c = tiny_config();
  Parameters a = init_parameters(c);
  Parameters b = init_parameters(c);
  for (std::size_t i = 0; i < a.named().size(); ++i) {
    const DenseArray& av = a.named()[i].second.value();
    const DenseArray& bv = b.named()[i].second.value();
    REQUIRE(av.size() == bv.size());
    for (std::size_t j = 0; j < av.size(); ++j) CHECK(av[j] == bv[j]);  // bitwise
  }

  ModelConfig bad = c;
  bad.n_heads = 3;  // does not divide d_model=8
  CHECK_THROWS_AS(init_parameters(bad), ConfigError);

  // Shape contract: V=16, d_model=8 -> embedding [16 x 8].
  ModelConfig shapes = c;
  shapes.vocab_size = 16;
  Parameters p = init_parameters(shapes);
  CHECK(p.wte.value().dim(0) == 16);
  CHECK(p.wte.value().dim(1) == 8);
  CHECK(p.head_w.value().dim(0) == 8);
  CHECK(p.head_w.value().dim(1) == 16);
}

TEST_CASE("forward causality: perturbing token j changes logits only at >= j") {
  ModelConfig c = tiny_config();
  Parameters params = init_parameters(c);
  SeededRng rng(7);
  const int L = 6;
  std::vector<int> tokens = random_tokens(L, c.vocab_size, rng);
  ForwardOutput base = forward(params, tokens, {L}, 1, L);

  const int j = 3;
  std::vector<int> perturbed = tokens;
  perturbed[j] = (perturbed[j] + 1) % c.vocab_size;
  ForwardOutput changed = forward(params, perturbed, {L}, 1, L);

  const std::size_t v = base.logits.value().dim(1);
  for (int pos = 0; pos < L; ++pos) {
    double diff = 0.0;
    for (std::size_t k = 0; k < v; ++k) {
      diff = std::max(diff, std::abs(base.logits.value().at2(pos, k) -
                                     changed.logits.value().at2(pos, k)));
    }
    if (pos < j) {
      CHECK(diff == 0.0);  // strictly causal
    }
  }
  // The perturbed position itself must differ somewhere.
  double diff_at_j = 0.0;
  for (std::size_t k = 0; k < v; ++k) {
    diff_at_j = std::max(diff_at_j, std::abs(base.logits.value().at2(j, k) -
                                             changed.logits.value().at2(j, k)));
  }
  CHECK(diff_at_j > 0.0);
}

TEST_CASE("logits row equals hidden row times head weights") {
  ModelConfig c = tiny_config();
  Parameters params = init_parameters(c);
  SeededRng rng(9);
  const int L = 5;
  std::vector<int> tokens = random_tokens(L, c.vocab_size, rng);
  ForwardOutput out = forward(params, tokens, {L}, 1, L);

  const DenseArray& hidden = out.hidden.value();
  const DenseArray& logits = out.logits.value();
  const DenseArray& w = params.head_w.value();
  for (int pos = 0; pos < L; ++pos) {
    for (int k = 0; k < c.vocab_size; ++k) {
      double acc = 0.0;
      for (int d = 0; d < c.d_model; ++d) acc += hidden.at2(pos, d) * w.at2(d, k);
      CHECK(std::abs(acc - logits.at2(pos, k)) <= 1e-12);
    }
  }
}

TEST_CASE("padding equivalence: a padded batch leaves real positions unchanged") {
  ModelConfig c = tiny_config();
  Parameters params = init_parameters(c);
  SeededRng rng(21);
  const int L_short = 5, L_long = 9;
  std::vector<int> seq = random_tokens(L_short, c.vocab_size, rng);

  ForwardOutput alone = forward(params, seq, {L_short}, 1, L_short);

  // Same sequence inside a padded two-row batch.
  std::vector<int> other = random_tokens(L_long, c.vocab_size, rng);
  std::vector<int> grid(2 * L_long, 0);
  std::copy(seq.begin(), seq.end(), grid.begin());
  std::copy(other.begin(), other.end(), grid.begin() + L_long);
  ForwardOutput batched = forward(params, grid, {L_short, L_long}, 2, L_long);

  const std::size_t v = alone.logits.value().dim(1);
  for (int pos = 0; pos < L_short; ++pos) {
    for (std::size_t k = 0; k < v; ++k) {
      CHECK(std::abs(alone.logits.value().at2(pos, k) - batched.logits.value().at2(pos, k)) <=
            1e-10);
    }
  }
}

TEST_CASE("lm_head examples") {
  ModelConfig c = tiny_config();
  Parameters params = init_parameters(c);

  // One-hot hidden row selects a row of W.
  DenseArray onehot({1, static_cast<std::size_t>(c.d_model)});
  onehot.at2(0, 3) = 1.0;
  ad::Var logits = lm_head(params, ad::constant(onehot));
  for (int k = 0; k < c.vocab_size; ++k) {
    CHECK(logits.value().at2(0, k) == doctest::Approx(params.head_w.value().at2(3, k)).epsilon(1e-15));
  }

  // No bias: zero hidden -> zero logits.
  ad::Var zero = lm_head(params, ad::constant(DenseArray({2, static_cast<std::size_t>(c.d_model)})));
  for (std::size_t i = 0; i < zero.value().size(); ++i) CHECK(zero.value()[i] == 0.0);

  CHECK_THROWS_AS(lm_head(params, ad::constant(DenseArray({2, 5}))), ShapeError);

  // Shared code path: forward().logits is literally lm_head of forward().hidden.
  SeededRng rng(3);
  std::vector<int> tokens = random_tokens(4, c.vocab_size, rng);
  ForwardOutput out = forward(params, tokens, {4}, 1, 4);
  ad::Var again = lm_head(params, out.hidden);
  for (std::size_t i = 0; i < again.value().size(); ++i) {
    CHECK(again.value()[i] == out.logits.value()[i]);  // bitwise
  }
}

TEST_CASE("forward rejects bad input") {
  ModelConfig c = tiny_config();
  Parameters params = init_parameters(c);
  CHECK_THROWS_AS(forward(params, {99}, {1}, 1, 1), InvalidInputError);
  CHECK_THROWS_AS(forward(params, std::vector<int>(c.max_seq_len + 1, 0),
                          {c.max_seq_len + 1}, 1, c.max_seq_len + 1),
                  LengthError);
}

TEST_CASE("full-model gradient matches finite differences on a tiny instance") {
  // 2-layer, d_model=8 model; every parameter checked against central
  // differences of the NTP-style scalar loss.
  ModelConfig c = tiny_config();
  c.max_seq_len = 6;
  Parameters params = init_parameters(c);
  SeededRng rng(13);
  const int L = 6;
  std::vector<int> tokens = random_tokens(L, c.vocab_size, rng);
  const std::vector<int> targets = random_tokens(L, c.vocab_size, rng);
  const std::vector<double> weights{0.0, 1.0, 1.0, 1.0, 1.0, 1.0};

  auto loss_from = [&](const Parameters& p) {
    ForwardOutput out = forward(p, tokens, {L}, 1, L);
    return ad::nll_rows(out.logits, targets, weights, 5.0);
  };

  ad::Var root = loss_from(params);
  ad::backward(root);

  auto named = params.named();
  double worst = 0.0;
  for (auto& [name, var] : named) {
    const DenseArray base = var.value();
    DenseArray fd = finite_diff_grad(
        [&](const DenseArray& probe) {
          var.mutable_value() = probe;
          const double value = loss_from(params).value()[0];
          var.mutable_value() = base;
          return value;
        },
        base, 1e-4);
    worst = std::max(worst, max_rel_err(var.grad(), fd, 1e-2));
  }
  CHECK(worst < 1e-4);
}
