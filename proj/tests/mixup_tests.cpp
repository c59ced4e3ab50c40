#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "sftmix/errors.hpp"
#include "sftmix/mixup.hpp"
#include "support/test_util.hpp"

using namespace sftmix;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 32;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 32;
  c.init_seed = 8;
  return c;
}

}  // namespace

TEST_CASE("pair_epoch covers every id exactly once") {
  ConfidenceSplit split;
  for (int i = 0; i < 4; ++i) split.confident_ids.push_back("c" + std::to_string(i));
  for (int i = 0; i < 4; ++i) split.unconfident_ids.push_back("u" + std::to_string(i));

  SeededRng rng(1);
  auto batches = pair_epoch(split, 4, rng);
  REQUIRE(batches.size() == 2);  // 4 pairs, 2 per batch
  std::set<std::string> seen;
  for (const auto& batch : batches) {
    CHECK(batch.size() == 2);
    for (const auto& [c, u] : batch) {
      CHECK(seen.insert(c).second);
      CHECK(seen.insert(u).second);
      CHECK(c[0] == 'c');
      CHECK(u[0] == 'u');
    }
  }
  CHECK(seen.size() == 8);

  // Same seed, same pairing.
  SeededRng r1(9), r2(9);
  CHECK(pair_epoch(split, 4, r1) == pair_epoch(split, 4, r2));

  ConfidenceSplit uneven = split;
  uneven.unconfident_ids.pop_back();
  SeededRng r3(2);
  CHECK_THROWS_AS(pair_epoch(uneven, 4, r3), ContractError);
  CHECK_THROWS_AS(pair_epoch(split, 3, r3), ConfigError);
}

TEST_CASE("sample_lambda stays in [0,1] and is reproducible") {
  SeededRng a(5), b(5);
  for (int i = 0; i < 100; ++i) {
    const double la = sample_lambda(0.5, a);
    CHECK(la >= 0.0);
    CHECK(la <= 1.0);
    CHECK(la == sample_lambda(0.5, b));
  }
}

TEST_CASE("interpolate endpoints and two-hot labels") {
  SeededRng rng(12);
  DenseArray zc = test::random_array({3, 4}, rng);
  DenseArray zu = test::random_array({5, 4}, rng);
  const std::vector<int> yc{1, 2, 3}, yu{7, 2, 9, 4, 5};

  // lambda=1 returns the confident endpoint rows and one-hot labels.
  InterpolatedTargets at_one = interpolate(zc, zu, yc, yu, 1.0, 16);
  REQUIRE(at_one.z.dim(0) == 3);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(at_one.z.at2(r, c) == zc.at2(r, c));
    CHECK(at_one.y.at2(r, yc[r]) == 1.0);
  }
  InterpolatedTargets at_zero = interpolate(zc, zu, yc, yu, 0.0, 16);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(at_zero.z.at2(r, c) == zu.at2(r, c));
    CHECK(at_zero.y.at2(r, yu[r]) == 1.0);
  }

  // lambda=0.5 places 0.5 on each of two distinct tokens.
  InterpolatedTargets mid = interpolate(zc, zu, yc, yu, 0.5, 16);
  CHECK(mid.y.at2(0, 1) == 0.5);
  CHECK(mid.y.at2(0, 7) == 0.5);
  // Coinciding tokens collapse to a single unit entry (row 1: both are 2).
  CHECK(mid.y.at2(1, 2) == 1.0);

  DenseArray bad = test::random_array({3, 5}, rng);
  CHECK_THROWS_AS(interpolate(zc, bad, yc, yu, 0.5, 16), ShapeError);
}

TEST_CASE("mixup_loss on a single pair with uniform logits equals ln V") {
  // Zeroed model -> logits are identically zero -> soft cross-entropy of any
  // two-hot target under the uniform predictor is ln V.
  ModelConfig c = small_config();
  Parameters p = init_parameters(c);
  for (auto& [name, var] : p.named()) var.mutable_value().fill(0.0);
  Tokenizer tok(26);

  std::vector<InstructionExample> conf{{"c0", TaskFamily::kCopy, "cpya", "a"}};
  std::vector<InstructionExample> unconf{{"u0", TaskFamily::kNoisy, "rndb", "k"}};
  ad::Var loss = mixup_loss(p, conf, unconf, {0.5}, tok);
  CHECK(loss.value()[0] == doctest::Approx(std::log(32.0)).epsilon(1e-13));

  // A batch of identical pairs keeps the same mean.
  std::vector<InstructionExample> conf4(4, conf[0]);
  std::vector<InstructionExample> unconf4(4, unconf[0]);
  for (int i = 0; i < 4; ++i) {
    conf4[i].id = "c" + std::to_string(i);
    unconf4[i].id = "u" + std::to_string(i);
  }
  ad::Var loss4 = mixup_loss(p, conf4, unconf4, {0.5, 0.5, 0.5, 0.5}, tok);
  CHECK(loss4.value()[0] == doctest::Approx(loss.value()[0]).epsilon(1e-13));
}

TEST_CASE("mixup_loss gradients flow into both sides and the head") {
  ModelConfig c = small_config();
  Parameters p = init_parameters(c);
  Tokenizer tok(26);
  std::vector<InstructionExample> conf{{"c0", TaskFamily::kCopy, "cpyabc", "abc"}};
  std::vector<InstructionExample> unconf{{"u0", TaskFamily::kNoisy, "rndxy", "qq"}};
  ad::Var loss = mixup_loss(p, conf, unconf, {0.37}, tok);
  ad::backward(loss);
  auto nonzero = [](const DenseArray& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g[i] != 0.0) return true;
    }
    return false;
  };
  CHECK(nonzero(p.head_w.grad()));
  CHECK(nonzero(p.wte.grad()));
  CHECK(nonzero(p.layers[0].wq.grad()));
}

TEST_CASE("label symmetry: swapped roles with 1-lambda give the same loss") {
  ModelConfig c = small_config();
  Parameters p = init_parameters(c);
  Tokenizer tok(26);
  std::vector<InstructionExample> a{{"c0", TaskFamily::kCopy, "cpyabcd", "abcd"}};
  std::vector<InstructionExample> b{{"u0", TaskFamily::kNoisy, "rndpq", "zv"}};
  for (double lam : {0.0, 0.2, 0.5, 0.9, 1.0}) {
    const double forward_loss = mixup_loss(p, a, b, {lam}, tok).value()[0];
    const double swapped_loss = mixup_loss(p, b, a, {1.0 - lam}, tok).value()[0];
    CHECK(std::abs(forward_loss - swapped_loss) <= 1e-12);
  }
}

TEST_CASE("make_mixup_batch and the batch-driven loss") {
  ModelConfig c = small_config();
  Parameters p = init_parameters(c);
  Tokenizer tok(26);
  std::vector<InstructionExample> dataset{
      {"c0", TaskFamily::kCopy, "cpyabc", "abc"},
      {"c1", TaskFamily::kReverse, "revwxyz", "zyxw"},
      {"u0", TaskFamily::kNoisy, "rndpq", "hello"},
      {"u1", TaskFamily::kNoisy, "rndz", "k"},
  };
  SeededRng rng(77);
  MixupBatch batch = make_mixup_batch({{"c0", "u0"}, {"c1", "u1"}}, dataset, 0.5, rng);
  REQUIRE(batch.pairs.size() == 2);
  CHECK(batch.pairs[0].trunc_len == 3);  // min(3, 5)
  CHECK(batch.pairs[1].trunc_len == 1);  // min(4, 1)
  for (const auto& pair : batch.pairs) {
    CHECK(pair.lambda >= 0.0);
    CHECK(pair.lambda <= 1.0);
  }

  // Batch-driven loss agrees with the explicit paired form.
  const double via_batch = mixup_loss(p, dataset, batch, tok).value()[0];
  const double direct = mixup_loss(p, {dataset[0], dataset[1]}, {dataset[2], dataset[3]},
                                   {batch.pairs[0].lambda, batch.pairs[1].lambda}, tok)
                            .value()[0];
  CHECK(via_batch == direct);

  SeededRng rng2(78);
  CHECK_THROWS_AS(make_mixup_batch({{"c0", "ghost"}}, dataset, 0.5, rng2), DataError);
}

TEST_CASE("sftmix_loss composition") {
  ad::Var ntp = ad::leaf(DenseArray::scalar(2.0));
  ad::Var mix = ad::leaf(DenseArray::scalar(0.5));
  CHECK(sftmix_loss(ntp, mix, 0.2).value()[0] == doctest::Approx(2.1).epsilon(1e-15));
  CHECK(sftmix_loss(ntp, mix, 0.0).value()[0] == 2.0);  // mu=0 -> exactly ell_NTP
  CHECK(sftmix_loss_value(1.0, 3.0, 0.5) == doctest::Approx(2.5).epsilon(1e-15));
  for (double mu : {0.1, 0.2, 0.5}) {  // the sweep grid
    CHECK(sftmix_loss_value(1.0, 1.0, mu) == doctest::Approx(1.0 + mu).epsilon(1e-15));
  }
  CHECK_THROWS_AS(sftmix_loss(ntp, mix, -0.1), ConfigError);
}

TEST_CASE("head_gradient_check agrees with both oracles") {
  SeededRng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    DenseArray z = test::random_array({3}, rng);
    DenseArray w = test::random_array({3, 4}, rng);
    DenseArray y({4});
    y[rng.below(4)] += 0.3;
    y[rng.below(4)] += 0.7;
    HeadGradientReport rep = head_gradient_check(z, y, w);
    CHECK(rep.rel_err_autodiff < 1e-10);
    CHECK(rep.rel_err_finite_diff < 1e-5);
  }

  // Stationary point: uniform target under zero weights.
  DenseArray z({2}, {0.4, -0.2});
  DenseArray w({2, 4});
  DenseArray y = DenseArray::full({4}, 0.25);
  HeadGradientReport rep = head_gradient_check(z, y, w);
  for (std::size_t i = 0; i < rep.closed_form.size(); ++i) CHECK(rep.closed_form[i] == 0.0);
}

TEST_CASE("non_decomposition_witness worked instance and endpoints") {
  DenseArray zc({2}, {2.0, 0.0});
  DenseArray zu({2}, {0.0, 1.0});
  DenseArray eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
  // Hand evaluation: softmax([1,0.5]) = [0.62246, 0.37754] vs the mixture
  // 0.5*softmax([2,0]) + 0.5*softmax([0,1]) = [0.57487, 0.42513].
  const double d = non_decomposition_witness(zc, zu, eye, 0.5);
  CHECK(d == doctest::Approx(0.0475900815).epsilon(1e-6));
  CHECK(std::abs(d - 0.0476) < 1e-3);
  CHECK(non_decomposition_witness(zc, zu, eye, 0.0) <= 1e-12);
  CHECK(non_decomposition_witness(zc, zu, eye, 1.0) <= 1e-12);
  CHECK(non_decomposition_witness(zc, zc, eye, 0.5) <= 1e-12);
}
