#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sftmix/checkpoint.hpp"
#include "sftmix/corpus.hpp"
#include "sftmix/dynamics.hpp"
#include "sftmix/mixup.hpp"
#include "sftmix/model.hpp"
#include "sftmix/rng.hpp"

namespace sftmix {

// The recipe matrix: the SFTMix default, the plain NTP baseline, the
// loss-role variants (mixup alone, mixup as an unweighted extra loss) and the
// NTP-dataset variants (NTP restricted to the confident or unconfident half,
// with or without the mixup regularizer).
enum class RecipeVariant {
  kNtp,
  kSftmix,
  kMixupOnly,
  kNtpPlusMixupLoss,
  kNtpConfHalf,
  kNtpUnconfHalf,
  kNtpConfHalfPlusMixup,
  kNtpUnconfHalfPlusMixup,
};

constexpr int kNumRecipes = 8;
const char* recipe_name(RecipeVariant r);
RecipeVariant recipe_from_name(const std::string& name);  // throws ConfigError
std::vector<RecipeVariant> all_recipes();

bool recipe_has_mixup(RecipeVariant r);
enum class NtpSubset { kFull, kConfident, kUnconfident, kNone };
NtpSubset recipe_ntp_subset(RecipeVariant r);
// Weight actually applied to the mixup term: config mu for regularizer
// recipes, fixed 1 for MixupOnly / NtpPlusMixupLoss, irrelevant for pure NTP.
double recipe_mu_effective(RecipeVariant r, double mu);
bool recipe_needs_split(RecipeVariant r);

struct TrainConfig {
  RecipeVariant recipe = RecipeVariant::kNtp;
  double alpha = 0.5;
  double mu = 0.2;
  double learning_rate = 1e-3;
  double weight_decay = 0.1;
  double warmup_ratio = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;     // 0 disables clipping
  bool sum_reduction = false; // token-mean by default
  int epochs = 10;
  int batch_size = 32;
  int checkpoint_count = 5;
  std::uint64_t seed = 7;
  ModelConfig model;
  std::string data_path;
  std::string split_path;
  std::string out_dir;

  void validate() const;  // throws ConfigError
};

nlohmann::ordered_json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamMoments {
  DenseArray m;
  DenseArray v;
};

// One AdamW update: bias-corrected moments plus decoupled weight decay
// (param -= lr*wd*param, separate from the adaptive step). step is 1-based.
void adamw_step(DenseArray& param, const DenseArray& grad, AdamMoments& moments, long step,
                double lr, double weight_decay, double beta1, double beta2, double eps);

// Linear warmup 0 -> peak over ceil(warmup_ratio * total_steps) steps, then
// cosine decay peak -> 0 at total_steps.
double lr_at(long step, long total_steps, double peak_lr, double warmup_ratio);

struct StepMetrics {
  long step = 0;
  double lr = 0.0;
  double loss_ntp = 0.0;
  double loss_mixup = 0.0;
  double loss_total = 0.0;
  std::optional<double> lambda_mean;
};

// Run directory layout: config.json, metrics.jsonl, checkpoints/ckpt_{k}.bin.
class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<InstructionExample> dataset,
          std::optional<ConfidenceSplit> split);

  // Fresh run: init weights, train every step, save C evenly spaced
  // checkpoints (the last at the final step).
  void run();
  // Restore a checkpoint from this run's configuration and finish the
  // remaining steps; continuation is bitwise identical to an uninterrupted
  // run. Metrics lines for the remaining steps are appended.
  void resume(const std::filesystem::path& checkpoint_file);

  long total_steps() const { return total_steps_; }
  long steps_per_epoch() const { return steps_per_epoch_; }
  const std::vector<long>& checkpoint_steps() const { return checkpoint_steps_; }
  const Parameters& params() const { return params_; }
  const std::vector<StepMetrics>& metrics() const { return metrics_; }

 private:
  void train_loop(long first_step);
  StepMetrics execute_step(long step);
  void optimizer_update(const ad::Var& total_loss, long step, double lr);
  void save_checkpoint_at(long step);
  CheckpointData snapshot(long step) const;

  struct EpochPlan {
    // NTP-only path: example indices chunked into batches.
    std::vector<std::vector<int>> plain_batches;
    // Mixup path: (confident index, unconfident index) pairs per batch.
    std::vector<std::vector<std::pair<int, int>>> paired_batches;
  };
  EpochPlan plan_epoch(long epoch) const;

  TrainConfig config_;
  std::vector<InstructionExample> dataset_;
  std::optional<ConfidenceSplit> split_;
  Tokenizer tokenizer_;

  // Behavior after the mu=0 reduction: a mixup recipe whose effective mu is 0
  // degenerates exactly to the matching pure-NTP recipe (same batches, same
  // rng consumption, zero mixup column).
  RecipeVariant effective_recipe_ = RecipeVariant::kNtp;
  bool mixup_active_ = false;
  double mu_effective_ = 0.0;

  std::vector<int> ntp_pool_;        // indices the NTP term may draw from
  std::vector<int> conf_indices_;    // split halves resolved to indices
  std::vector<int> unconf_indices_;
  long steps_per_epoch_ = 0;
  long total_steps_ = 0;
  std::vector<long> checkpoint_steps_;

  Parameters params_;
  std::vector<AdamMoments> moments_;
  SeededRng lambda_rng_;

  long completed_steps_ = 0;
  EpochPlan current_plan_;
  long current_plan_epoch_ = -1;
  std::vector<StepMetrics> metrics_;
  std::ofstream metrics_out_;
};

}  // namespace sftmix
