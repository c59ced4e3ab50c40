// sftmix: confidence-aware instruction tuning on a micro transformer.
//
// Pipeline stages are separate subcommands so a reference run (which produces
// the confidence file) and the target training run can use different models:
//   sftmix gen-data --out corpus.jsonl --num 2048 --seed 7
//   sftmix train --recipe ntp --data corpus.jsonl --out runs/ref
//   sftmix dynamics --run runs/ref --data corpus.jsonl --out conf.jsonl
//   sftmix split --confidence conf.jsonl --out split.json --data corpus.jsonl
//   sftmix train --recipe sftmix --data corpus.jsonl --split split.json --out runs/mix
//   sftmix eval --run runs/mix --data heldout.jsonl --out eval.json
//   sftmix report --runs runs/ref,runs/mix --data heldout.jsonl --out report.json
//   sftmix check

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sftmix/checkpoint.hpp"
#include "sftmix/corpus.hpp"
#include "sftmix/dynamics.hpp"
#include "sftmix/errors.hpp"
#include "sftmix/evalreport.hpp"
#include "sftmix/selfcheck.hpp"
#include "sftmix/trainer.hpp"

namespace fs = std::filesystem;
using namespace sftmix;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerificationFailure = 1;
constexpr int kExitUsage = 2;

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("SFTMIX_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    return std::stoull(v);
  } catch (...) {
    throw ConfigError("SFTMIX_SEED is not a valid integer: " + std::string(v));
  }
}

// Checkpoint files of a run, ordered by index k.
std::vector<fs::path> checkpoint_files(const fs::path& run_dir) {
  const fs::path dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) {
    throw IoError("no checkpoints directory under " + run_dir.string());
  }
  std::vector<std::pair<long, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("ckpt_", 0) == 0 && name.size() > 9 &&
        name.substr(name.size() - 4) == ".bin") {
      found.emplace_back(std::stol(name.substr(5, name.size() - 9)), entry.path());
    }
  }
  if (found.empty()) throw IoError("no checkpoints found under " + dir.string());
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [k, p] : found) out.push_back(std::move(p));
  return out;
}

Parameters parameters_from_checkpoint(const CheckpointData& data) {
  Parameters params = init_parameters(data.model);
  auto named = params.named();
  if (named.size() != data.params.size()) {
    throw FormatError("checkpoint parameter count does not match model config");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (named[i].first != data.params[i].first ||
        !named[i].second.value().same_shape(data.params[i].second)) {
      throw FormatError("checkpoint parameter mismatch at " + data.params[i].first);
    }
    named[i].second.mutable_value() = data.params[i].second;
  }
  return params;
}

RunEval evaluate_run(const fs::path& run_dir, const std::vector<InstructionExample>& heldout,
                     const Tokenizer& tok, int decode_cap) {
  const auto ckpts = checkpoint_files(run_dir);
  const Parameters params = parameters_from_checkpoint(load_checkpoint(ckpts.back()));
  RunEval eval;
  eval.run_name = fs::path(run_dir).filename().string();
  const fs::path cfg_path = run_dir / "config.json";
  if (fs::exists(cfg_path)) {
    std::ifstream in(cfg_path);
    nlohmann::json j = nlohmann::json::parse(in);
    eval.recipe = j.value("recipe", std::string("?"));
    eval.mu = j.value("mu", 0.0);
    eval.train_data = j.value("data", std::string());
  }
  eval.perplexity = heldout_perplexity(params, heldout, tok);
  eval.accuracy = task_accuracy(params, heldout, tok, decode_cap);
  return eval;
}

void write_json_file(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

int cmd_gen_data(const std::string& out, int num, std::optional<std::uint64_t> seed,
                 const std::string& fractions_json, int alphabet, int min_len, int max_len) {
  CorpusSpec spec;
  spec.num_examples = num;
  spec.alphabet_size = alphabet;
  spec.min_payload = min_len;
  spec.max_payload = max_len;
  if (seed) {
    spec.seed = *seed;
  } else if (auto s = env_seed()) {
    spec.seed = *s;
  }
  if (!fractions_json.empty()) {
    nlohmann::json j = nlohmann::json::parse(fractions_json);
    spec.frac_copy = j.value("copy", 0.0);
    spec.frac_reverse = j.value("reverse", 0.0);
    spec.frac_const_map = j.value("const_map", 0.0);
    spec.frac_noisy = j.value("noisy", 0.0);
  }
  const auto examples = generate_corpus(spec);
  write_corpus_jsonl(out, examples);

  std::map<std::string, int> counts;
  for (const auto& ex : examples) counts[family_name(ex.family)] += 1;
  std::cout << "wrote " << examples.size() << " examples to " << out << " (seed " << spec.seed
            << ")\n";
  for (const auto& [fam, n] : counts) std::cout << "  " << fam << ": " << n << '\n';
  return kExitOk;
}

int cmd_train(CLI::App* cmd, TrainConfig config, const std::string& config_path,
              bool init_seed_given) {
  bool seed_given = cmd->count("--seed") > 0;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config file: " + config_path);
    nlohmann::json base = nlohmann::json::parse(in);
    TrainConfig from_file = train_config_from_json(base);
    // Flags override file values: re-apply every flag the user actually set.
    TrainConfig flags = config;
    config = from_file;
    auto took = [&](const std::string& name) { return cmd->count(name) > 0; };
    if (took("--recipe")) config.recipe = flags.recipe;
    if (took("--data")) config.data_path = flags.data_path;
    if (took("--split")) config.split_path = flags.split_path;
    if (took("--out")) config.out_dir = flags.out_dir;
    if (took("--seed")) config.seed = flags.seed;
    if (took("--mu")) config.mu = flags.mu;
    if (took("--alpha")) config.alpha = flags.alpha;
    if (took("--epochs")) config.epochs = flags.epochs;
    if (took("--batch")) config.batch_size = flags.batch_size;
    if (took("--lr")) config.learning_rate = flags.learning_rate;
    if (took("--checkpoints")) config.checkpoint_count = flags.checkpoint_count;
    if (took("--weight-decay")) config.weight_decay = flags.weight_decay;
    if (took("--warmup")) config.warmup_ratio = flags.warmup_ratio;
    if (took("--grad-clip")) config.grad_clip = flags.grad_clip;
    if (took("--sum-reduction")) config.sum_reduction = flags.sum_reduction;
    if (took("--d-model")) config.model.d_model = flags.model.d_model;
    if (took("--layers")) config.model.n_layers = flags.model.n_layers;
    if (took("--heads")) config.model.n_heads = flags.model.n_heads;
    if (took("--d-ff")) config.model.d_ff = flags.model.d_ff;
    if (took("--vocab")) config.model.vocab_size = flags.model.vocab_size;
    if (took("--max-seq")) config.model.max_seq_len = flags.model.max_seq_len;
    if (took("--init-seed")) {
      config.model.init_seed = flags.model.init_seed;
      init_seed_given = true;
    } else if (base.contains("model") && base["model"].contains("init_seed")) {
      init_seed_given = true;
    }
    seed_given = seed_given || base.contains("seed");
  }
  if (!seed_given) {
    if (auto s = env_seed()) config.seed = *s;
  }
  // Unless pinned explicitly, the weight init follows the run seed so that
  // matched-seed recipe comparisons start from identical weights.
  if (!init_seed_given) config.model.init_seed = config.seed;

  if (config.data_path.empty()) throw ConfigError("train: --data is required");
  if (config.out_dir.empty()) throw ConfigError("train: --out is required");
  if (recipe_needs_split(config.recipe) && config.split_path.empty()) {
    throw ConfigError("train: recipe '" + std::string(recipe_name(config.recipe)) +
                      "' requires --split (run `sftmix dynamics` and `sftmix split` first)");
  }

  const auto dataset = read_corpus_jsonl(config.data_path);
  std::optional<ConfidenceSplit> split;
  if (!config.split_path.empty()) split = read_split_json(config.split_path);

  Trainer trainer(config, dataset, split);
  std::cout << "recipe " << recipe_name(config.recipe) << ", " << dataset.size() << " examples, "
            << trainer.total_steps() << " steps (" << trainer.steps_per_epoch() << "/epoch), "
            << "seed " << config.seed << '\n';
  trainer.run();
  const auto& last = trainer.metrics().back();
  std::cout << "done: final loss_total " << last.loss_total << " -> " << config.out_dir << '\n';
  return kExitOk;
}

int cmd_dynamics(const std::string& run_dir, const std::string& data_path,
                 const std::string& out_path, const std::string& embeddings_path) {
  const auto dataset = read_corpus_jsonl(data_path);
  const auto files = checkpoint_files(run_dir);
  std::vector<Parameters> checkpoints;
  checkpoints.reserve(files.size());
  for (const auto& f : files) checkpoints.push_back(parameters_from_checkpoint(load_checkpoint(f)));
  std::vector<const Parameters*> views;
  for (const auto& c : checkpoints) views.push_back(&c);

  const Tokenizer tok(26);
  const auto records = compute_confidence(views, dataset, tok);
  write_confidence_jsonl(out_path, records);
  std::cout << "wrote " << records.size() << " confidence records (" << files.size()
            << " checkpoints) to " << out_path << '\n';

  if (!embeddings_path.empty()) {
    const auto rows = export_embeddings(checkpoints.back(), dataset, tok);
    write_embeddings_jsonl(embeddings_path, rows);
    std::cout << "wrote " << rows.size() << " embedding rows to " << embeddings_path << '\n';
  }
  return kExitOk;
}

int cmd_split(const std::string& confidence_path, const std::string& out_path,
              const std::string& data_path) {
  const auto records = read_confidence_jsonl(confidence_path);
  const ConfidenceSplit split = split_by_confidence(records);
  write_split_json(out_path, split);
  std::cout << "split " << records.size() << " records into " << split.confident_ids.size()
            << " confident / " << split.unconfident_ids.size() << " unconfident -> " << out_path
            << '\n';
  if (!data_path.empty()) {
    const auto dataset = read_corpus_jsonl(data_path);
    const CompositionReport comp = confidence_composition(split, dataset);
    std::cout << composition_to_json(comp).dump(2) << '\n';
  }
  return kExitOk;
}

int cmd_eval(const std::string& run_dir, const std::string& data_path,
             const std::string& out_path, int decode_cap) {
  if (!fs::is_directory(run_dir)) throw IoError("run directory not found: " + run_dir);
  const auto heldout = read_corpus_jsonl(data_path);
  const Tokenizer tok(26);
  const RunEval eval = evaluate_run(run_dir, heldout, tok, decode_cap);
  write_json_file(out_path, run_eval_to_json(eval));
  std::cout << "overall held-out perplexity " << eval.perplexity.overall << " -> " << out_path
            << '\n';
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& data_path,
               const std::string& out_path, int decode_cap) {
  const auto heldout = read_corpus_jsonl(data_path);
  const Tokenizer tok(26);
  std::vector<RunEval> evals;
  for (const auto& dir : run_dirs) {
    if (!fs::is_directory(dir)) throw IoError("run directory not found: " + dir);
    evals.push_back(evaluate_run(dir, heldout, tok, decode_cap));
  }
  const nlohmann::ordered_json report = compare_recipes(evals);
  if (!out_path.empty()) write_json_file(out_path, report);
  std::cout << render_report_table(report);
  return kExitOk;
}

int cmd_check() {
  const auto results = run_selfchecks();
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
    if (!r.pass) std::cout << " -- " << r.detail;
    std::cout << '\n';
    all_pass = all_pass && r.pass;
  }
  std::cout << (all_pass ? "all checks passed\n" : "some checks FAILED\n");
  return all_pass ? kExitOk : kExitVerificationFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"confidence-aware instruction tuning laboratory"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic instruction corpus");
  std::string gen_out;
  int gen_num = 2048, gen_alphabet = 26, gen_min = 4, gen_max = 16;
  std::uint64_t gen_seed = 7;
  std::string gen_fractions;
  gen->add_option("--out", gen_out, "output JSONL path")->required();
  gen->add_option("--num", gen_num, "number of examples (even)");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--fractions", gen_fractions, "family fractions as JSON object");
  gen->add_option("--alphabet", gen_alphabet, "alphabet size (<= 26)");
  gen->add_option("--min-len", gen_min, "minimum payload length");
  gen->add_option("--max-len", gen_max, "maximum payload length");

  // train
  auto* train = app.add_subcommand("train", "train a recipe on a corpus");
  TrainConfig tc;
  std::string train_recipe = "ntp", train_config_path;
  train->add_option("--recipe", train_recipe, "one of: ntp sftmix mixup_only "
                    "ntp_plus_mixup_loss ntp_conf_half ntp_unconf_half "
                    "ntp_conf_half_plus_mixup ntp_unconf_half_plus_mixup");
  train->add_option("--data", tc.data_path, "training corpus JSONL");
  train->add_option("--out", tc.out_dir, "run directory");
  train->add_option("--split", tc.split_path, "confidence split JSON");
  train->add_option("--config", train_config_path, "JSON config file (flags override)");
  train->add_option("--seed", tc.seed, "run seed");
  train->add_option("--mu", tc.mu, "mixup regularization weight");
  train->add_option("--alpha", tc.alpha, "Beta(alpha,alpha) for lambda");
  train->add_option("--epochs", tc.epochs, "training epochs");
  train->add_option("--batch", tc.batch_size, "batch size");
  train->add_option("--lr", tc.learning_rate, "peak learning rate");
  train->add_option("--checkpoints", tc.checkpoint_count, "checkpoints to save");
  train->add_option("--weight-decay", tc.weight_decay, "decoupled weight decay");
  train->add_option("--warmup", tc.warmup_ratio, "warmup ratio");
  train->add_option("--grad-clip", tc.grad_clip, "gradient clip (0 = off)");
  train->add_flag("--sum-reduction", tc.sum_reduction, "sum losses instead of token-mean");
  train->add_option("--d-model", tc.model.d_model, "model width");
  train->add_option("--layers", tc.model.n_layers, "transformer layers");
  train->add_option("--heads", tc.model.n_heads, "attention heads");
  train->add_option("--d-ff", tc.model.d_ff, "feed-forward width");
  train->add_option("--vocab", tc.model.vocab_size, "vocabulary size");
  train->add_option("--max-seq", tc.model.max_seq_len, "context length");
  train->add_option("--init-seed", tc.model.init_seed, "weight init seed (defaults to --seed)");

  // dynamics
  auto* dyn = app.add_subcommand("dynamics", "per-checkpoint perplexities and confidence");
  std::string dyn_run, dyn_data, dyn_out, dyn_emb;
  dyn->add_option("--run", dyn_run, "reference run directory")->required();
  dyn->add_option("--data", dyn_data, "corpus JSONL")->required();
  dyn->add_option("--out", dyn_out, "confidence JSONL output")->required();
  dyn->add_option("--embeddings", dyn_emb, "also export final-token embeddings (JSONL)");

  // split
  auto* spl = app.add_subcommand("split", "median confidence split");
  std::string spl_conf, spl_out, spl_data;
  spl->add_option("--confidence", spl_conf, "confidence JSONL")->required();
  spl->add_option("--out", spl_out, "split JSON output")->required();
  spl->add_option("--data", spl_data, "corpus JSONL (prints family composition)");

  // eval
  auto* ev = app.add_subcommand("eval", "held-out perplexity and task accuracy");
  std::string ev_run, ev_data, ev_out;
  int ev_cap = 0;
  ev->add_option("--run", ev_run, "run directory")->required();
  ev->add_option("--data", ev_data, "held-out corpus JSONL")->required();
  ev->add_option("--out", ev_out, "eval JSON output")->required();
  ev->add_option("--decode-cap", ev_cap, "greedy decode length cap");

  // report
  auto* rep = app.add_subcommand("report", "compare runs side by side");
  std::string rep_runs, rep_data, rep_out;
  int rep_cap = 0;
  rep->add_option("--runs", rep_runs, "comma-separated run directories")->required();
  rep->add_option("--data", rep_data, "held-out corpus JSONL")->required();
  rep->add_option("--out", rep_out, "report JSON output");
  rep->add_option("--decode-cap", rep_cap, "greedy decode length cap");

  // check
  app.add_subcommand("check", "run the verification suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      std::optional<std::uint64_t> seed;
      if (gen->count("--seed") > 0) seed = gen_seed;
      return cmd_gen_data(gen_out, gen_num, seed, gen_fractions, gen_alphabet, gen_min, gen_max);
    }
    if (train->parsed()) {
      tc.recipe = recipe_from_name(train_recipe);
      return cmd_train(train, tc, train_config_path, train->count("--init-seed") > 0);
    }
    if (dyn->parsed()) return cmd_dynamics(dyn_run, dyn_data, dyn_out, dyn_emb);
    if (spl->parsed()) return cmd_split(spl_conf, spl_out, spl_data);
    if (ev->parsed()) return cmd_eval(ev_run, ev_data, ev_out, ev_cap);
    if (rep->parsed()) {
      std::vector<std::string> dirs;
      std::stringstream ss(rep_runs);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) dirs.push_back(item);
      }
      if (dirs.empty()) throw ConfigError("report: no run directories given");
      return cmd_report(dirs, rep_data, rep_out, rep_cap);
    }
    if (app.get_subcommand("check")->parsed()) return cmd_check();
    std::cerr << "no subcommand\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitVerificationFailure;
  }
}
