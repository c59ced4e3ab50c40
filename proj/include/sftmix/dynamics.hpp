#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sftmix/corpus.hpp"
#include "sftmix/model.hpp"

namespace sftmix {

struct ConfidenceRecord {
  std::string example_id;
  std::vector<double> perplexities;  // one per checkpoint, in checkpoint order
  double confidence = 0.0;           // -(mean of perplexities)
};

// Equal-sized partition by confidence. Every confident example's confidence
// is >= every unconfident one's.
struct ConfidenceSplit {
  std::vector<std::string> confident_ids;
  std::vector<std::string> unconfident_ids;
};

// Teacher-forced mean negative log-likelihood over the response tokens
// y_1..y_N (instruction tokens provide context only; the closing EOS is a
// training-mask detail and is excluded from this average).
double example_nll(const Parameters& params, const InstructionExample& example,
                   const Tokenizer& tok);

// exp(example_nll); monotone in NLL.
double perplexity(const Parameters& params, const InstructionExample& example,
                  const Tokenizer& tok);

// Batched example_nll over a slice of examples (one shared forward pass).
std::vector<double> response_nll_batch(const Parameters& params,
                                       const std::vector<InstructionExample>& examples,
                                       const Tokenizer& tok);

double confidence_from_perplexities(const std::vector<double>& perplexities);

// Perplexity of every example under every checkpoint (in order); confidence
// is the negative mean. Output order = dataset order.
std::vector<ConfidenceRecord> compute_confidence(const std::vector<const Parameters*>& checkpoints,
                                                 const std::vector<InstructionExample>& dataset,
                                                 const Tokenizer& tok);

// Sort by (confidence desc, id asc), top half confident. Deterministic and
// invariant to input order; requires an even record count.
ConfidenceSplit split_by_confidence(std::vector<ConfidenceRecord> records);

struct EmbeddingRow {
  std::string id;
  TaskFamily family;
  std::vector<double> vector;  // d_model last-layer state of the final token
};

std::vector<EmbeddingRow> export_embeddings(const Parameters& params,
                                            const std::vector<InstructionExample>& dataset,
                                            const Tokenizer& tok);

// JSONL {"id","perplexities",[...],"confidence"}; one line per example.
void write_confidence_jsonl(const std::filesystem::path& path,
                            const std::vector<ConfidenceRecord>& records);
std::vector<ConfidenceRecord> read_confidence_jsonl(const std::filesystem::path& path);

// JSON object {"confident": [ids], "unconfident": [ids]}.
void write_split_json(const std::filesystem::path& path, const ConfidenceSplit& split);
ConfidenceSplit read_split_json(const std::filesystem::path& path);

// JSONL {"id","family","vector"} for external projection/plotting.
void write_embeddings_jsonl(const std::filesystem::path& path,
                            const std::vector<EmbeddingRow>& rows);

}  // namespace sftmix
