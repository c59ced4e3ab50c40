#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sftmix/corpus.hpp"
#include "sftmix/dynamics.hpp"
#include "sftmix/model.hpp"

namespace sftmix {

struct PerplexityReport {
  double overall = 0.0;  // example-weighted mean of per-example perplexities
  std::map<std::string, double> per_family;
  std::map<std::string, int> counts;
};

// Mean held-out perplexity per family and overall. The dataset must come from
// a seed disjoint from training.
PerplexityReport heldout_perplexity(const Parameters& params,
                                    const std::vector<InstructionExample>& dataset,
                                    const Tokenizer& tok);

struct AccuracyReport {
  std::map<std::string, double> per_family;  // deterministic families only
  std::map<std::string, int> counts;
};

// Greedy decode from [BOS, X, SEP] until EOS or the length cap; exact match
// against the reference response tokens. Noisy examples are skipped (nothing
// deterministic to match).
AccuracyReport task_accuracy(const Parameters& params,
                             const std::vector<InstructionExample>& dataset, const Tokenizer& tok,
                             int decode_cap = 0);  // 0: response length + small slack

// Greedy continuation for one instruction; exposed for the CLI and tests.
std::vector<int> greedy_decode(const Parameters& params, const std::vector<int>& instr_tokens,
                               int max_new_tokens);

struct RunEval {
  std::string run_name;
  std::string recipe;
  double mu = 0.0;
  std::string train_data;  // corpus the run was trained on (for precondition checks)
  PerplexityReport perplexity;
  AccuracyReport accuracy;
};

// JSON report for one run.
nlohmann::ordered_json run_eval_to_json(const RunEval& eval);

// Comparison across runs, keyed by run name, with per-column best flags.
// Throws ConfigError when the runs disagree on their training corpus.
nlohmann::ordered_json compare_recipes(const std::vector<RunEval>& evals);

// Aligned plain-text rendering of a comparison report.
std::string render_report_table(const nlohmann::ordered_json& report);

struct CompositionReport {
  // subset name -> family -> fraction (fractions per subset sum to 1)
  std::map<std::string, std::map<std::string, double>> fractions;
  std::map<std::string, int> subset_sizes;
};

// Family composition of the confident/unconfident halves; the desk-scale
// analogue of inspecting which topics the model is confident about.
CompositionReport confidence_composition(const ConfidenceSplit& split,
                                         const std::vector<InstructionExample>& dataset);

nlohmann::ordered_json composition_to_json(const CompositionReport& report);

}  // namespace sftmix
