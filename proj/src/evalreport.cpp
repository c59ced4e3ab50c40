#include "sftmix/evalreport.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "sftmix/errors.hpp"

namespace sftmix {

namespace {

constexpr std::size_t kEvalChunk = 64;

}  // namespace

PerplexityReport heldout_perplexity(const Parameters& params,
                                    const std::vector<InstructionExample>& dataset,
                                    const Tokenizer& tok) {
  if (dataset.empty()) throw ContractError("heldout_perplexity: empty dataset");
  PerplexityReport report;
  std::map<std::string, double> totals;
  double overall_total = 0.0;
  for (std::size_t begin = 0; begin < dataset.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(begin + kEvalChunk, dataset.size());
    std::vector<InstructionExample> chunk(dataset.begin() + begin, dataset.begin() + end);
    const std::vector<double> nll = response_nll_batch(params, chunk, tok);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const double p = std::exp(nll[i]);
      totals[family_name(chunk[i].family)] += p;
      report.counts[family_name(chunk[i].family)] += 1;
      overall_total += p;
    }
  }
  for (const auto& [fam, total] : totals) {
    report.per_family[fam] = total / report.counts[fam];
  }
  report.overall = overall_total / static_cast<double>(dataset.size());
  return report;
}

std::vector<int> greedy_decode(const Parameters& params, const std::vector<int>& instr_tokens,
                               int max_new_tokens) {
  std::vector<int> context;
  context.reserve(instr_tokens.size() + 2 + max_new_tokens);
  context.push_back(Tokenizer::kBos);
  context.insert(context.end(), instr_tokens.begin(), instr_tokens.end());
  context.push_back(Tokenizer::kSep);

  std::vector<int> emitted;
  for (int step = 0; step < max_new_tokens; ++step) {
    if (static_cast<int>(context.size()) >= params.config.max_seq_len) break;
    const std::vector<int> valid_len{static_cast<int>(context.size())};
    ForwardOutput out = forward(params, context, valid_len, 1, static_cast<int>(context.size()));
    const DenseArray& logits = out.logits.value();
    const std::size_t v = logits.dim(1);
    const double* row = logits.data() + (context.size() - 1) * v;
    int best = 0;
    for (std::size_t j = 1; j < v; ++j) {
      if (row[j] > row[best]) best = static_cast<int>(j);
    }
    if (best == Tokenizer::kEos) return emitted;  // clean stop
    emitted.push_back(best);
    context.push_back(best);
  }
  emitted.push_back(-1);  // length cap hit without EOS; never exact-matches
  return emitted;
}

AccuracyReport task_accuracy(const Parameters& params,
                             const std::vector<InstructionExample>& dataset, const Tokenizer& tok,
                             int decode_cap) {
  AccuracyReport report;
  std::map<std::string, int> hits;
  for (const auto& ex : dataset) {
    if (ex.family == TaskFamily::kNoisy) continue;  // no deterministic reference
    const std::vector<int> instr = tok.tokenize(ex.instruction);
    const std::vector<int> want = tok.tokenize(ex.response);
    const int cap = decode_cap > 0 ? decode_cap : static_cast<int>(want.size()) + 2;
    const std::vector<int> got = greedy_decode(params, instr, cap);
    const std::string fam = family_name(ex.family);
    report.counts[fam] += 1;
    if (got == want) hits[fam] += 1;
  }
  for (const auto& [fam, n] : report.counts) {
    report.per_family[fam] = n == 0 ? 0.0 : static_cast<double>(hits[fam]) / n;
  }
  return report;
}

nlohmann::ordered_json run_eval_to_json(const RunEval& eval) {
  nlohmann::ordered_json j;
  j["run"] = eval.run_name;
  j["recipe"] = eval.recipe;
  j["mu"] = eval.mu;
  j["perplexity"]["overall"] = eval.perplexity.overall;
  for (const auto& [fam, v] : eval.perplexity.per_family) j["perplexity"][fam] = v;
  for (const auto& [fam, v] : eval.accuracy.per_family) j["accuracy"][fam] = v;
  return j;
}

nlohmann::ordered_json compare_recipes(const std::vector<RunEval>& evals) {
  if (evals.empty()) throw ContractError("compare_recipes: no runs given");
  std::unordered_set<std::string> seen;
  for (const auto& e : evals) {
    if (!seen.insert(e.run_name).second) {
      throw ContractError("compare_recipes: duplicate run name " + e.run_name);
    }
    if (!e.train_data.empty() && !evals.front().train_data.empty() &&
        e.train_data != evals.front().train_data) {
      throw ConfigError("compare_recipes: runs were trained on different corpora (" +
                        evals.front().train_data + " vs " + e.train_data + ")");
    }
  }

  nlohmann::ordered_json report;
  for (const auto& e : evals) report[e.run_name] = run_eval_to_json(e);

  // Flag the best run per column (lowest perplexity, highest accuracy).
  nlohmann::ordered_json best;
  std::string best_ppl_run;
  double best_ppl = 0.0;
  for (const auto& e : evals) {
    if (best_ppl_run.empty() || e.perplexity.overall < best_ppl) {
      best_ppl = e.perplexity.overall;
      best_ppl_run = e.run_name;
    }
  }
  best["perplexity_overall"] = best_ppl_run;
  std::map<std::string, std::pair<std::string, double>> best_acc;
  for (const auto& e : evals) {
    for (const auto& [fam, v] : e.accuracy.per_family) {
      auto it = best_acc.find(fam);
      if (it == best_acc.end() || v > it->second.second) best_acc[fam] = {e.run_name, v};
    }
  }
  for (const auto& [fam, who] : best_acc) best["accuracy_" + fam] = who.first;
  report["best"] = best;
  return report;
}

std::string render_report_table(const nlohmann::ordered_json& report) {
  std::vector<std::string> fams{"copy", "reverse", "const_map", "noisy"};
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"run", "recipe", "mu", "ppl_overall", "ppl_copy", "ppl_reverse", "ppl_const_map",
                  "ppl_noisy", "acc_copy", "acc_reverse", "acc_const_map"});
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  for (const auto& [run, entry] : report.items()) {
    if (run == "best") continue;
    std::vector<std::string> row;
    row.push_back(run);
    row.push_back(entry.value("recipe", std::string("?")));
    row.push_back(fmt(entry.value("mu", 0.0)));
    const auto& ppl = entry.at("perplexity");
    row.push_back(fmt(ppl.value("overall", 0.0)));
    for (const auto& fam : fams) row.push_back(ppl.contains(fam) ? fmt(ppl[fam]) : "-");
    const auto acc = entry.contains("accuracy") ? entry["accuracy"] : nlohmann::ordered_json{};
    for (const auto& fam : {"copy", "reverse", "const_map"}) {
      row.push_back(acc.contains(fam) ? fmt(acc[fam]) : "-");
    }
    rows.push_back(std::move(row));
  }

  std::vector<std::size_t> widths(rows[0].size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      os << row[c] << std::string(widths[c] - row[c].size() + 2, ' ');
    }
    os << '\n';
  }
  if (report.contains("best")) {
    os << "best perplexity: " << report["best"].value("perplexity_overall", std::string("-"))
       << '\n';
  }
  return os.str();
}

CompositionReport confidence_composition(const ConfidenceSplit& split,
                                         const std::vector<InstructionExample>& dataset) {
  std::unordered_map<std::string, TaskFamily> family_of;
  for (const auto& ex : dataset) family_of[ex.id] = ex.family;
  if (split.confident_ids.size() + split.unconfident_ids.size() != dataset.size()) {
    throw DataError("confidence_composition: split does not cover the dataset");
  }

  CompositionReport report;
  auto tally = [&](const char* name, const std::vector<std::string>& ids) {
    std::map<std::string, int> counts;
    for (const auto& id : ids) {
      auto it = family_of.find(id);
      if (it == family_of.end()) throw DataError("confidence_composition: unknown id " + id);
      counts[family_name(it->second)] += 1;
    }
    report.subset_sizes[name] = static_cast<int>(ids.size());
    for (int f = 0; f < kNumFamilies; ++f) {
      const std::string fam = family_name(static_cast<TaskFamily>(f));
      report.fractions[name][fam] =
          ids.empty() ? 0.0 : static_cast<double>(counts[fam]) / static_cast<double>(ids.size());
    }
  };
  tally("confident", split.confident_ids);
  tally("unconfident", split.unconfident_ids);
  return report;
}

nlohmann::ordered_json composition_to_json(const CompositionReport& report) {
  nlohmann::ordered_json j;
  for (const auto& [subset, fams] : report.fractions) {
    for (const auto& [fam, frac] : fams) j[subset][fam] = frac;
    j[subset]["count"] = report.subset_sizes.at(subset);
  }
  return j;
}

}  // namespace sftmix
