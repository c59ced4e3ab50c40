#include <doctest.h>

#include <cmath>
#include <fstream>

#include "sftmix/errors.hpp"
#include "sftmix/trainer.hpp"
#include "support/test_util.hpp"

using namespace sftmix;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.vocab_size = 32;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 32;
  c.init_seed = 11;
  return c;
}

TrainConfig small_train(const std::string& out_dir) {
  TrainConfig c;
  c.model = small_model();
  c.epochs = 2;
  c.batch_size = 8;
  c.checkpoint_count = 2;
  c.learning_rate = 1e-3;
  c.seed = 5;
  c.out_dir = out_dir;
  return c;
}

std::vector<InstructionExample> small_corpus(int n = 32, std::uint64_t seed = 3) {
  CorpusSpec spec;
  spec.num_examples = n;
  spec.min_payload = 2;
  spec.max_payload = 5;
  spec.seed = seed;
  return generate_corpus(spec);
}

ConfidenceSplit trivial_split(const std::vector<InstructionExample>& dataset) {
  // Ids alternate into halves; the trainer only needs a valid partition.
  ConfidenceSplit split;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (i % 2 == 0 ? split.confident_ids : split.unconfident_ids).push_back(dataset[i].id);
  }
  return split;
}

}  // namespace

TEST_CASE("adamw_step worked examples") {
  // Zero gradient, zero moments: only the decoupled decay acts.
  DenseArray p({1}, {1.0});
  AdamMoments mom{DenseArray({1}), DenseArray({1})};
  adamw_step(p, DenseArray({1}), mom, 1, 0.1, 0.1, 0.9, 0.999, 1e-8);
  CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-15));

  // Constant gradient, no decay: |update| -> lr in the Adam limit.
  DenseArray q({1}, {0.0});
  AdamMoments mom2{DenseArray({1}), DenseArray({1})};
  DenseArray g({1}, {0.5});
  double prev = q[0];
  double last_update = 0.0;
  for (long step = 1; step <= 300; ++step) {
    adamw_step(q, g, mom2, step, 0.01, 0.0, 0.9, 0.999, 1e-8);
    last_update = q[0] - prev;
    prev = q[0];
  }
  CHECK(std::abs(last_update) == doctest::Approx(0.01).epsilon(1e-3));
  CHECK(last_update < 0.0);  // descends against a positive gradient

  // Determinism: same inputs, same result (bitwise).
  DenseArray a({2}, {0.3, -0.4}), b({2}, {0.3, -0.4});
  AdamMoments ma{DenseArray({2}), DenseArray({2})}, mb{DenseArray({2}), DenseArray({2})};
  DenseArray grad({2}, {0.1, 0.2});
  for (long s = 1; s <= 10; ++s) {
    adamw_step(a, grad, ma, s, 0.05, 0.01, 0.9, 0.999, 1e-8);
    adamw_step(b, grad, mb, s, 0.05, 0.01, 0.9, 0.999, 1e-8);
  }
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);

  CHECK_THROWS_AS(adamw_step(a, DenseArray({3}), ma, 1, 0.1, 0.0, 0.9, 0.999, 1e-8), ShapeError);
  CHECK_THROWS_AS(adamw_step(a, grad, ma, 0, 0.1, 0.0, 0.9, 0.999, 1e-8), ContractError);
}

TEST_CASE("lr_at schedule endpoints") {
  CHECK(lr_at(0, 100, 1.0, 0.1) == 0.0);
  CHECK(lr_at(10, 100, 1.0, 0.1) == doctest::Approx(1.0).epsilon(1e-15));  // warmup end
  CHECK(lr_at(100, 100, 1.0, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lr_at(5, 100, 1.0, 0.1) == doctest::Approx(0.5).epsilon(1e-15));
  // Middle of the cosine leg: peak/2 at the midpoint between warmup and end.
  CHECK(lr_at(55, 100, 1.0, 0.1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(-1, 100, 1.0, 0.1), ContractError);
  CHECK_THROWS_AS(lr_at(101, 100, 1.0, 0.1), ContractError);
}

TEST_CASE("checkpoint save/load round-trip is byte-identical") {
  test::TempDir tmp("ckpt");
  CheckpointData data;
  data.model = small_model();
  data.step = 17;
  SeededRng rng(3);
  data.rng_state = rng.state_string();
  data.params.emplace_back("wte", test::random_array({4, 3}, rng));
  data.params.emplace_back("head_w", test::random_array({3, 4}, rng));
  data.adam_m.emplace_back("wte", test::random_array({4, 3}, rng, 0.1));
  data.adam_m.emplace_back("head_w", test::random_array({3, 4}, rng, 0.1));
  data.adam_v.emplace_back("wte", DenseArray({4, 3}));
  data.adam_v.emplace_back("head_w", DenseArray({3, 4}));

  save_checkpoint(tmp / "a.bin", data);
  CheckpointData loaded = load_checkpoint(tmp / "a.bin");
  CHECK(loaded.step == 17);
  CHECK(loaded.rng_state == data.rng_state);
  CHECK(loaded.model == data.model);
  save_checkpoint(tmp / "b.bin", loaded);
  CHECK(test::read_file(tmp / "a.bin") == test::read_file(tmp / "b.bin"));

  // Flipping one payload byte must fail the checksum.
  std::string blob = test::read_file(tmp / "a.bin");
  blob[blob.size() - 3] ^= 0x40;
  {
    std::ofstream out(tmp / "corrupt.bin", std::ios::binary);
    out << blob;
  }
  CHECK_THROWS_AS(load_checkpoint(tmp / "corrupt.bin"), IntegrityError);

  // Version bump must be rejected as a format error.
  std::string vblob = test::read_file(tmp / "a.bin");
  vblob[8] = 99;  // little-endian u32 version field after the magic
  {
    std::ofstream out(tmp / "badver.bin", std::ios::binary);
    out << vblob;
  }
  CHECK_THROWS_AS(load_checkpoint(tmp / "badver.bin"), FormatError);

  CHECK_THROWS_AS(load_checkpoint(tmp / "missing.bin"), IoError);
}

TEST_CASE("train config validation and json round-trip") {
  test::TempDir tmp("cfg");
  TrainConfig c = small_train((tmp / "run").string());
  c.recipe = RecipeVariant::kSftmix;
  c.data_path = "corpus.jsonl";
  c.split_path = "split.json";
  nlohmann::ordered_json j = train_config_to_json(c);
  TrainConfig back = train_config_from_json(j);
  CHECK(back.recipe == RecipeVariant::kSftmix);
  CHECK(back.mu == c.mu);
  CHECK(back.seed == c.seed);
  CHECK(back.model == c.model);
  CHECK(back.data_path == c.data_path);

  TrainConfig bad = c;
  bad.batch_size = 7;  // odd batch with a mixup recipe
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.mu = -0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.warmup_ratio = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("recipe helpers") {
  CHECK(recipe_from_name("sftmix") == RecipeVariant::kSftmix);
  CHECK_THROWS_AS(recipe_from_name("nonsense"), ConfigError);
  CHECK(recipe_mu_effective(RecipeVariant::kMixupOnly, 0.2) == 1.0);
  CHECK(recipe_mu_effective(RecipeVariant::kNtpPlusMixupLoss, 0.2) == 1.0);
  CHECK(recipe_mu_effective(RecipeVariant::kSftmix, 0.2) == 0.2);
  CHECK(recipe_needs_split(RecipeVariant::kNtp) == false);
  CHECK(recipe_needs_split(RecipeVariant::kNtpConfHalf) == true);
  CHECK(recipe_ntp_subset(RecipeVariant::kMixupOnly) == NtpSubset::kNone);
  CHECK(all_recipes().size() == kNumRecipes);
}

TEST_CASE("training runs, losses decompose, and loss decreases") {
  test::TempDir tmp("train");
  auto dataset = small_corpus();
  auto split = trivial_split(dataset);

  TrainConfig c = small_train((tmp / "run").string());
  c.recipe = RecipeVariant::kSftmix;
  c.epochs = 3;
  Trainer trainer(c, dataset, split);
  trainer.run();

  const auto& metrics = trainer.metrics();
  REQUIRE(static_cast<long>(metrics.size()) == trainer.total_steps());
  for (const auto& m : metrics) {
    CHECK(std::abs(m.loss_total - (m.loss_ntp + c.mu * m.loss_mixup)) <= 1e-12);
    REQUIRE(m.lambda_mean.has_value());
    CHECK(*m.lambda_mean >= 0.0);
    CHECK(*m.lambda_mean <= 1.0);
  }
  CHECK(metrics.back().loss_ntp < metrics.front().loss_ntp);

  // Run directory artifacts.
  CHECK(std::filesystem::exists(tmp / "run" / "config.json"));
  CHECK(std::filesystem::exists(tmp / "run" / "metrics.jsonl"));
  CHECK(std::filesystem::exists(tmp / "run" / "checkpoints" / "ckpt_1.bin"));
  CHECK(std::filesystem::exists(tmp / "run" / "checkpoints" / "ckpt_2.bin"));

  // Checkpoint cadence: evenly spaced within rounding, final step included.
  const auto& cadence = trainer.checkpoint_steps();
  REQUIRE(cadence.size() == static_cast<std::size_t>(c.checkpoint_count));
  CHECK(cadence.back() == trainer.total_steps());
  for (std::size_t k = 0; k < cadence.size(); ++k) {
    const double ideal = static_cast<double>(k + 1) * trainer.total_steps() / cadence.size();
    CHECK(std::abs(cadence[k] - ideal) <= 0.5 + 1e-9);
    if (k > 0) CHECK(cadence[k] > cadence[k - 1]);
  }
}

TEST_CASE("identical configs give bitwise-identical runs") {
  test::TempDir tmp("repr");
  auto dataset = small_corpus();
  TrainConfig c = small_train((tmp / "a").string());
  Trainer t1(c, dataset, std::nullopt);
  t1.run();
  c.out_dir = (tmp / "b").string();
  Trainer t2(c, dataset, std::nullopt);
  t2.run();
  CHECK(test::read_file(tmp / "a" / "metrics.jsonl") ==
        test::read_file(tmp / "b" / "metrics.jsonl"));
  CHECK(test::read_file(tmp / "a" / "checkpoints" / "ckpt_2.bin") ==
        test::read_file(tmp / "b" / "checkpoints" / "ckpt_2.bin"));
  CHECK_FALSE(test::read_file(tmp / "a" / "metrics.jsonl").empty());
}

TEST_CASE("save/load/continue matches uninterrupted training bitwise") {
  test::TempDir tmp("resume");
  auto dataset = small_corpus();
  auto split = trivial_split(dataset);

  // Uninterrupted reference run.
  TrainConfig c = small_train((tmp / "full").string());
  c.recipe = RecipeVariant::kSftmix;  // exercises the lambda rng stream too
  c.epochs = 3;
  Trainer full(c, dataset, split);
  full.run();

  // Interrupted run: same config, resumed from its mid-run checkpoint.
  c.out_dir = (tmp / "part").string();
  Trainer part(c, dataset, split);
  part.run();  // writes ckpt_1 at the midpoint as well
  const auto ckpt1 = std::filesystem::path(c.out_dir) / "checkpoints" / "ckpt_1.bin";
  REQUIRE(std::filesystem::exists(ckpt1));

  c.out_dir = (tmp / "cont").string();
  Trainer cont(c, dataset, split);
  cont.resume(ckpt1);

  // The continued run's metrics must equal the tail of the full run's.
  auto full_lines = test::read_lines(tmp / "full" / "metrics.jsonl");
  auto cont_lines = test::read_lines(tmp / "cont" / "metrics.jsonl");
  REQUIRE(full_lines.size() > cont_lines.size());
  const std::size_t offset = full_lines.size() - cont_lines.size();
  for (std::size_t i = 0; i < cont_lines.size(); ++i) {
    CHECK(cont_lines[i] == full_lines[offset + i]);
  }
  // And the final checkpoints must be byte-identical.
  CHECK(test::read_file(tmp / "full" / "checkpoints" / "ckpt_2.bin") ==
        test::read_file(tmp / "cont" / "checkpoints" / "ckpt_2.bin"));

  // Wrong model config is rejected.
  TrainConfig other = c;
  other.model.d_model = 32;
  other.model.n_heads = 4;
  other.out_dir = (tmp / "bad").string();
  Trainer bad(other, dataset, split);
  CHECK_THROWS_AS(bad.resume(ckpt1), ConfigError);
}

TEST_CASE("half-dataset recipes restrict the NTP pool and halve the steps") {
  test::TempDir tmp("half");
  auto dataset = small_corpus();
  auto split = trivial_split(dataset);

  TrainConfig c = small_train((tmp / "conf").string());
  c.recipe = RecipeVariant::kNtpConfHalf;
  c.checkpoint_count = 1;
  Trainer conf_half(c, dataset, split);
  CHECK(conf_half.steps_per_epoch() ==
        (static_cast<long>(dataset.size()) / 2 + c.batch_size - 1) / c.batch_size);

  TrainConfig full_cfg = small_train((tmp / "full").string());
  Trainer full(full_cfg, dataset, std::nullopt);
  CHECK(full.steps_per_epoch() == 2 * conf_half.steps_per_epoch());

  // Missing split is a config error for recipes that need one.
  TrainConfig missing = small_train((tmp / "missing").string());
  missing.recipe = RecipeVariant::kSftmix;
  CHECK_THROWS_AS(Trainer(missing, dataset, std::nullopt), ConfigError);
}

TEST_CASE("paired batches always hold equal halves") {
  test::TempDir tmp("pairs");
  auto dataset = small_corpus();
  auto split = trivial_split(dataset);
  TrainConfig c = small_train((tmp / "run").string());
  c.recipe = RecipeVariant::kMixupOnly;
  c.epochs = 1;
  c.checkpoint_count = 1;
  Trainer t(c, dataset, split);
  t.run();
  // 16 pairs, 4 per batch (B=8) -> 4 steps; loss_ntp identically zero.
  CHECK(t.total_steps() == 4);
  for (const auto& m : t.metrics()) {
    CHECK(m.loss_ntp == 0.0);
    CHECK(std::abs(m.loss_total - m.loss_mixup) <= 1e-12);
  }
}
