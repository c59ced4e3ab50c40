#include "sftmix/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "sftmix/errors.hpp"

namespace sftmix {

const char* recipe_name(RecipeVariant r) {
  switch (r) {
    case RecipeVariant::kNtp: return "ntp";
    case RecipeVariant::kSftmix: return "sftmix";
    case RecipeVariant::kMixupOnly: return "mixup_only";
    case RecipeVariant::kNtpPlusMixupLoss: return "ntp_plus_mixup_loss";
    case RecipeVariant::kNtpConfHalf: return "ntp_conf_half";
    case RecipeVariant::kNtpUnconfHalf: return "ntp_unconf_half";
    case RecipeVariant::kNtpConfHalfPlusMixup: return "ntp_conf_half_plus_mixup";
    case RecipeVariant::kNtpUnconfHalfPlusMixup: return "ntp_unconf_half_plus_mixup";
  }
  throw ContractError("recipe_name: unknown recipe");
}

std::vector<RecipeVariant> all_recipes() {
  return {RecipeVariant::kNtp,
          RecipeVariant::kSftmix,
          RecipeVariant::kMixupOnly,
          RecipeVariant::kNtpPlusMixupLoss,
          RecipeVariant::kNtpConfHalf,
          RecipeVariant::kNtpUnconfHalf,
          RecipeVariant::kNtpConfHalfPlusMixup,
          RecipeVariant::kNtpUnconfHalfPlusMixup};
}

RecipeVariant recipe_from_name(const std::string& name) {
  for (RecipeVariant r : all_recipes()) {
    if (name == recipe_name(r)) return r;
  }
  throw ConfigError("unknown recipe: " + name);
}

bool recipe_has_mixup(RecipeVariant r) {
  switch (r) {
    case RecipeVariant::kSftmix:
    case RecipeVariant::kMixupOnly:
    case RecipeVariant::kNtpPlusMixupLoss:
    case RecipeVariant::kNtpConfHalfPlusMixup:
    case RecipeVariant::kNtpUnconfHalfPlusMixup:
      return true;
    default:
      return false;
  }
}

NtpSubset recipe_ntp_subset(RecipeVariant r) {
  switch (r) {
    case RecipeVariant::kNtp:
    case RecipeVariant::kSftmix:
    case RecipeVariant::kNtpPlusMixupLoss:
      return NtpSubset::kFull;
    case RecipeVariant::kNtpConfHalf:
    case RecipeVariant::kNtpConfHalfPlusMixup:
      return NtpSubset::kConfident;
    case RecipeVariant::kNtpUnconfHalf:
    case RecipeVariant::kNtpUnconfHalfPlusMixup:
      return NtpSubset::kUnconfident;
    case RecipeVariant::kMixupOnly:
      return NtpSubset::kNone;
  }
  throw ContractError("recipe_ntp_subset: unknown recipe");
}

double recipe_mu_effective(RecipeVariant r, double mu) {
  switch (r) {
    case RecipeVariant::kMixupOnly:
    case RecipeVariant::kNtpPlusMixupLoss:
      return 1.0;  // ell_Mixup enters as a plain loss term
    case RecipeVariant::kSftmix:
    case RecipeVariant::kNtpConfHalfPlusMixup:
    case RecipeVariant::kNtpUnconfHalfPlusMixup:
      return mu;
    default:
      return mu;  // no mixup term; value never multiplies anything
  }
}

bool recipe_needs_split(RecipeVariant r) {
  return recipe_has_mixup(r) || recipe_ntp_subset(r) == NtpSubset::kConfident ||
         recipe_ntp_subset(r) == NtpSubset::kUnconfident;
}

void TrainConfig::validate() const {
  model.validate();
  if (!(alpha > 0.0)) throw ConfigError("TrainConfig: alpha must be > 0");
  if (!(mu >= 0.0)) throw ConfigError("TrainConfig: mu must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("TrainConfig: weight_decay must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError("TrainConfig: warmup_ratio must lie in [0,1)");
  }
  if (epochs <= 0) throw ConfigError("TrainConfig: epochs must be positive");
  if (batch_size <= 0) throw ConfigError("TrainConfig: batch_size must be positive");
  if (recipe_has_mixup(recipe) && batch_size % 2 != 0) {
    throw ConfigError("TrainConfig: mixup recipes need an even batch size");
  }
  if (checkpoint_count < 1) throw ConfigError("TrainConfig: checkpoint_count must be >= 1");
  if (!(grad_clip >= 0.0)) throw ConfigError("TrainConfig: grad_clip must be >= 0");
}

nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["recipe"] = recipe_name(c.recipe);
  j["alpha"] = c.alpha;
  j["mu"] = c.mu;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["warmup_ratio"] = c.warmup_ratio;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["grad_clip"] = c.grad_clip;
  j["sum_reduction"] = c.sum_reduction;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["checkpoint_count"] = c.checkpoint_count;
  j["seed"] = c.seed;
  j["model"] = model_config_to_json(c.model);
  j["data"] = c.data_path;
  j["split"] = c.split_path;
  j["out"] = c.out_dir;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  if (j.contains("recipe")) c.recipe = recipe_from_name(j.at("recipe").get<std::string>());
  opt("alpha", c.alpha);
  opt("mu", c.mu);
  opt("learning_rate", c.learning_rate);
  opt("weight_decay", c.weight_decay);
  opt("warmup_ratio", c.warmup_ratio);
  opt("adam_beta1", c.adam_beta1);
  opt("adam_beta2", c.adam_beta2);
  opt("adam_eps", c.adam_eps);
  opt("grad_clip", c.grad_clip);
  opt("sum_reduction", c.sum_reduction);
  opt("epochs", c.epochs);
  opt("batch_size", c.batch_size);
  opt("checkpoint_count", c.checkpoint_count);
  opt("seed", c.seed);
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  opt("data", c.data_path);
  opt("split", c.split_path);
  opt("out", c.out_dir);
  return c;
}

void adamw_step(DenseArray& param, const DenseArray& grad, AdamMoments& moments, long step,
                double lr, double weight_decay, double beta1, double beta2, double eps) {
  if (!param.same_shape(grad) || !param.same_shape(moments.m) || !param.same_shape(moments.v)) {
    throw ShapeError("adamw_step: parameter/gradient/moment shapes disagree");
  }
  if (step < 1) throw ContractError("adamw_step: step must be >= 1");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  double* p = param.data();
  const double* g = grad.data();
  double* m = moments.m.data();
  double* v = moments.v.data();
  const std::size_t n = param.size();
  for (std::size_t i = 0; i < n; ++i) {
    // Decoupled decay, applied independently of the adaptive step.
    p[i] -= lr * weight_decay * p[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
  check_finite(param, "adamw_step");
}

double lr_at(long step, long total_steps, double peak_lr, double warmup_ratio) {
  if (total_steps < 1) throw ContractError("lr_at: total_steps must be >= 1");
  if (step < 0 || step > total_steps) throw ContractError("lr_at: step out of range");
  long warmup = static_cast<long>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  warmup = std::min(warmup, total_steps - 1);  // leave room for the decay leg
  if (warmup > 0 && step <= warmup) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

long ceil_div(long a, long b) { return (a + b - 1) / b; }

// Positions whose next token carries loss: for each masked target position p,
// logits row p-1 predicts token[p].
struct NtpTargets {
  std::vector<int> tok;
  std::vector<double> weight;
  long count = 0;
};

NtpTargets ntp_targets(const TokenizedBatch& batch, const std::vector<std::uint8_t>& row_active) {
  const std::size_t total = batch.tokens.size();
  NtpTargets t;
  t.tok.assign(total, 0);
  t.weight.assign(total, 0.0);
  const int L = batch.seq_len;
  for (int r = 0; r < batch.batch; ++r) {
    if (!row_active[r]) continue;
    for (int p = 1; p < L; ++p) {
      const std::size_t pos = static_cast<std::size_t>(r) * L + p;
      if (!batch.response_mask[pos]) continue;
      t.tok[pos - 1] = batch.tokens[pos];
      t.weight[pos - 1] = 1.0;
      ++t.count;
    }
  }
  return t;
}

}  // namespace

Trainer::Trainer(TrainConfig config, std::vector<InstructionExample> dataset,
                 std::optional<ConfidenceSplit> split)
    : config_(std::move(config)),
      dataset_(std::move(dataset)),
      split_(std::move(split)),
      tokenizer_(26),
      lambda_rng_(SeededRng::derive(config_.seed, {0x6c616d626461ull})) {
  config_.validate();
  if (dataset_.empty()) throw DataError("Trainer: empty dataset");
  if (config_.model.vocab_size < tokenizer_.min_vocab_size()) {
    throw ConfigError("Trainer: vocab_size smaller than tokenizer alphabet");
  }

  // Resolve the recipe. A mixup recipe whose effective mu is zero reduces
  // exactly to the matching pure-NTP recipe: ell = ell_NTP + 0 * ell_Mixup.
  effective_recipe_ = config_.recipe;
  mu_effective_ = recipe_mu_effective(config_.recipe, config_.mu);
  if (recipe_has_mixup(config_.recipe) && mu_effective_ == 0.0) {
    switch (config_.recipe) {
      case RecipeVariant::kSftmix: effective_recipe_ = RecipeVariant::kNtp; break;
      case RecipeVariant::kNtpConfHalfPlusMixup:
        effective_recipe_ = RecipeVariant::kNtpConfHalf;
        break;
      case RecipeVariant::kNtpUnconfHalfPlusMixup:
        effective_recipe_ = RecipeVariant::kNtpUnconfHalf;
        break;
      default:
        throw ContractError("Trainer: recipe with fixed unit mu cannot degrade");
    }
  }
  mixup_active_ = recipe_has_mixup(effective_recipe_);

  if (recipe_needs_split(effective_recipe_)) {
    if (!split_) throw ConfigError("Trainer: recipe " + std::string(recipe_name(config_.recipe)) +
                                   " requires a confidence split");
    std::unordered_map<std::string, int> index;
    for (std::size_t i = 0; i < dataset_.size(); ++i) index[dataset_[i].id] = static_cast<int>(i);
    auto resolve = [&](const std::vector<std::string>& ids) {
      std::vector<int> out;
      out.reserve(ids.size());
      for (const auto& id : ids) {
        auto it = index.find(id);
        if (it == index.end()) throw DataError("Trainer: split id not in dataset: " + id);
        out.push_back(it->second);
      }
      return out;
    };
    conf_indices_ = resolve(split_->confident_ids);
    unconf_indices_ = resolve(split_->unconfident_ids);
    if (conf_indices_.size() + unconf_indices_.size() != dataset_.size()) {
      throw DataError("Trainer: split does not cover the dataset exactly");
    }
  }

  switch (recipe_ntp_subset(effective_recipe_)) {
    case NtpSubset::kConfident: ntp_pool_ = conf_indices_; break;
    case NtpSubset::kUnconfident: ntp_pool_ = unconf_indices_; break;
    default:
      ntp_pool_.resize(dataset_.size());
      for (std::size_t i = 0; i < dataset_.size(); ++i) ntp_pool_[i] = static_cast<int>(i);
      break;
  }

  if (mixup_active_) {
    if (conf_indices_.size() != unconf_indices_.size()) {
      throw ContractError("Trainer: split halves must be equal for mixup recipes");
    }
    steps_per_epoch_ = ceil_div(static_cast<long>(conf_indices_.size()), config_.batch_size / 2);
  } else {
    steps_per_epoch_ = ceil_div(static_cast<long>(ntp_pool_.size()), config_.batch_size);
  }
  total_steps_ = steps_per_epoch_ * config_.epochs;
  if (total_steps_ < config_.checkpoint_count) {
    throw ConfigError("Trainer: fewer steps than requested checkpoints");
  }
  for (int k = 1; k <= config_.checkpoint_count; ++k) {
    checkpoint_steps_.push_back(
        std::llround(static_cast<double>(k) * total_steps_ / config_.checkpoint_count));
  }
}

Trainer::EpochPlan Trainer::plan_epoch(long epoch) const {
  EpochPlan plan;
  if (mixup_active_) {
    // Pair ids statelessly per epoch so a resumed run rebuilds the identical
    // plan without replaying consumed rng.
    SeededRng rng = SeededRng::derive(config_.seed, {0x70616972ull, static_cast<std::uint64_t>(epoch)});
    ConfidenceSplit resolved;
    resolved.confident_ids = split_->confident_ids;
    resolved.unconfident_ids = split_->unconfident_ids;
    auto id_batches = pair_epoch(resolved, config_.batch_size, rng);
    std::unordered_map<std::string, int> index;
    for (std::size_t i = 0; i < dataset_.size(); ++i) index[dataset_[i].id] = static_cast<int>(i);
    for (const auto& id_batch : id_batches) {
      std::vector<std::pair<int, int>> batch;
      batch.reserve(id_batch.size());
      for (const auto& [cid, uid] : id_batch) batch.emplace_back(index.at(cid), index.at(uid));
      plan.paired_batches.push_back(std::move(batch));
    }
  } else {
    SeededRng rng = SeededRng::derive(config_.seed, {0x6f72646572ull, static_cast<std::uint64_t>(epoch)});
    std::vector<int> order = ntp_pool_;
    rng.shuffle(order);
    for (std::size_t i = 0; i < order.size(); i += config_.batch_size) {
      const std::size_t end = std::min(i + config_.batch_size, order.size());
      plan.plain_batches.emplace_back(order.begin() + i, order.begin() + end);
    }
  }
  return plan;
}

StepMetrics Trainer::execute_step(long step) {
  const long epoch = (step - 1) / steps_per_epoch_;
  const long batch_index = (step - 1) % steps_per_epoch_;
  if (epoch != current_plan_epoch_) {
    current_plan_ = plan_epoch(epoch);
    current_plan_epoch_ = epoch;
  }

  StepMetrics metrics;
  metrics.step = step;
  metrics.lr = lr_at(step, total_steps_, config_.learning_rate, config_.warmup_ratio);

  ad::Var total;
  if (mixup_active_) {
    const auto& pair_batch = current_plan_.paired_batches[batch_index];
    std::vector<InstructionExample> examples;
    examples.reserve(pair_batch.size() * 2);
    for (const auto& [ci, ui] : pair_batch) examples.push_back(dataset_[ci]);
    for (const auto& [ci, ui] : pair_batch) examples.push_back(dataset_[ui]);
    TokenizedBatch batch = collate(examples, tokenizer_, config_.model.max_seq_len);
    ForwardOutput fwd =
        forward(params_, batch.tokens, batch.valid_len, batch.batch, batch.seq_len);

    // lambda: one Beta(alpha,alpha) draw per pair, in batch order, from the
    // streaming rng that checkpoints serialize.
    const std::size_t n_pairs = pair_batch.size();
    std::vector<PairRows> pairs;
    pairs.reserve(n_pairs);
    double lambda_total = 0.0;
    for (std::size_t i = 0; i < n_pairs; ++i) {
      const double lam = sample_lambda(config_.alpha, lambda_rng_);
      lambda_total += lam;
      pairs.push_back({static_cast<int>(i), static_cast<int>(n_pairs + i), lam});
    }
    metrics.lambda_mean = lambda_total / static_cast<double>(n_pairs);

    ad::Var mixup = mixup_loss_from_forward(fwd, params_, batch, pairs, config_.sum_reduction);
    metrics.loss_mixup = mixup.value().scalar_value();

    const NtpSubset subset = recipe_ntp_subset(effective_recipe_);
    if (subset == NtpSubset::kNone) {
      metrics.loss_ntp = 0.0;
      total = ad::scale(mixup, mu_effective_);
    } else {
      std::vector<std::uint8_t> row_active(batch.batch, 1);
      if (subset == NtpSubset::kConfident) {
        std::fill(row_active.begin() + n_pairs, row_active.end(), 0);
      } else if (subset == NtpSubset::kUnconfident) {
        std::fill(row_active.begin(), row_active.begin() + n_pairs, 0);
      }
      NtpTargets t = ntp_targets(batch, row_active);
      const double divisor = config_.sum_reduction ? 1.0 : static_cast<double>(t.count);
      ad::Var ntp = ad::nll_rows(fwd.logits, t.tok, t.weight, divisor);
      metrics.loss_ntp = ntp.value().scalar_value();
      total = sftmix_loss(ntp, mixup, mu_effective_);
    }
  } else {
    const auto& indices = current_plan_.plain_batches[batch_index];
    std::vector<InstructionExample> examples;
    examples.reserve(indices.size());
    for (int i : indices) examples.push_back(dataset_[i]);
    TokenizedBatch batch = collate(examples, tokenizer_, config_.model.max_seq_len);
    ForwardOutput fwd =
        forward(params_, batch.tokens, batch.valid_len, batch.batch, batch.seq_len);
    std::vector<std::uint8_t> row_active(batch.batch, 1);
    NtpTargets t = ntp_targets(batch, row_active);
    const double divisor = config_.sum_reduction ? 1.0 : static_cast<double>(t.count);
    ad::Var ntp = ad::nll_rows(fwd.logits, t.tok, t.weight, divisor);
    metrics.loss_ntp = ntp.value().scalar_value();
    metrics.loss_mixup = 0.0;
    total = ntp;
  }

  metrics.loss_total = total.value().scalar_value();
  optimizer_update(total, step, metrics.lr);
  return metrics;
}

void Trainer::optimizer_update(const ad::Var& total_loss, long step, double lr) {
  ad::backward(total_loss);
  auto named = params_.named();

  if (config_.grad_clip > 0.0) {
    double sq = 0.0;
    for (auto& [name, var] : named) {
      const DenseArray& g = var.grad();
      for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > config_.grad_clip) {
      const double factor = config_.grad_clip / norm;
      for (auto& [name, var] : named) {
        DenseArray& g = var.node()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= factor;
      }
    }
  }

  for (std::size_t i = 0; i < named.size(); ++i) {
    ad::Var& var = named[i].second;
    adamw_step(var.mutable_value(), var.grad(), moments_[i], step, lr, config_.weight_decay,
               config_.adam_beta1, config_.adam_beta2, config_.adam_eps);
    var.clear_grad();
  }
}

namespace {

nlohmann::ordered_json metrics_to_json(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["lr"] = m.lr;
  j["loss_ntp"] = m.loss_ntp;
  j["loss_mixup"] = m.loss_mixup;
  j["loss_total"] = m.loss_total;
  if (m.lambda_mean) j["lambda_mean"] = *m.lambda_mean;
  return j;
}

}  // namespace

CheckpointData Trainer::snapshot(long step) const {
  CheckpointData data;
  data.model = config_.model;
  data.step = step;
  data.rng_state = lambda_rng_.state_string();
  const auto named = params_.named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    data.params.emplace_back(named[i].first, named[i].second.value());
    data.adam_m.emplace_back(named[i].first, moments_[i].m);
    data.adam_v.emplace_back(named[i].first, moments_[i].v);
  }
  return data;
}

void Trainer::save_checkpoint_at(long step) {
  const auto it = std::find(checkpoint_steps_.begin(), checkpoint_steps_.end(), step);
  if (it == checkpoint_steps_.end()) return;
  const long k = (it - checkpoint_steps_.begin()) + 1;
  const std::filesystem::path dir = std::filesystem::path(config_.out_dir) / "checkpoints";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / ("ckpt_" + std::to_string(k) + ".bin"), snapshot(step));
}

void Trainer::train_loop(long first_step) {
  for (long step = first_step; step <= total_steps_; ++step) {
    StepMetrics m = execute_step(step);
    metrics_.push_back(m);
    metrics_out_ << metrics_to_json(m).dump() << '\n';
    metrics_out_.flush();
    completed_steps_ = step;
    save_checkpoint_at(step);
  }
}

void Trainer::run() {
  std::filesystem::create_directories(config_.out_dir);
  {
    std::ofstream cfg(std::filesystem::path(config_.out_dir) / "config.json",
                      std::ios::binary | std::ios::trunc);
    if (!cfg) throw IoError("Trainer: cannot write config.json");
    cfg << train_config_to_json(config_).dump(2) << '\n';
  }
  params_ = init_parameters(config_.model);
  moments_.clear();
  for (const auto& [name, var] : params_.named()) {
    moments_.push_back({DenseArray(var.value().shape()), DenseArray(var.value().shape())});
  }
  lambda_rng_ = SeededRng::derive(config_.seed, {0x6c616d626461ull});

  metrics_out_.open(std::filesystem::path(config_.out_dir) / "metrics.jsonl",
                    std::ios::binary | std::ios::trunc);
  if (!metrics_out_) throw IoError("Trainer: cannot write metrics.jsonl");
  train_loop(1);
}

void Trainer::resume(const std::filesystem::path& checkpoint_file) {
  CheckpointData data = load_checkpoint(checkpoint_file);
  if (!(data.model == config_.model)) {
    throw ConfigError("Trainer::resume: checkpoint model config differs from the run config");
  }
  if (data.step < 0 || data.step > total_steps_) {
    throw ContractError("Trainer::resume: checkpoint step outside this run's schedule");
  }
  params_ = init_parameters(config_.model);  // shapes, then overwritten below
  auto named = params_.named();
  if (data.params.size() != named.size() || data.adam_m.size() != named.size() ||
      data.adam_v.size() != named.size()) {
    throw FormatError("Trainer::resume: checkpoint array count mismatch");
  }
  moments_.assign(named.size(), AdamMoments{});
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (data.params[i].first != named[i].first) {
      throw FormatError("Trainer::resume: parameter order mismatch at " + data.params[i].first);
    }
    if (!data.params[i].second.same_shape(named[i].second.value())) {
      throw ConfigError("Trainer::resume: parameter shape mismatch at " + named[i].first);
    }
    named[i].second.mutable_value() = data.params[i].second;
    moments_[i].m = data.adam_m[i].second;
    moments_[i].v = data.adam_v[i].second;
  }
  lambda_rng_.restore_state(data.rng_state);
  completed_steps_ = data.step;
  current_plan_epoch_ = -1;

  std::filesystem::create_directories(config_.out_dir);
  {
    std::ofstream cfg(std::filesystem::path(config_.out_dir) / "config.json",
                      std::ios::binary | std::ios::trunc);
    if (!cfg) throw IoError("Trainer: cannot write config.json");
    cfg << train_config_to_json(config_).dump(2) << '\n';
  }
  metrics_out_.open(std::filesystem::path(config_.out_dir) / "metrics.jsonl",
                    std::ios::binary | std::ios::app);
  if (!metrics_out_) throw IoError("Trainer: cannot append metrics.jsonl");
  train_loop(data.step + 1);
}

}  // namespace sftmix
