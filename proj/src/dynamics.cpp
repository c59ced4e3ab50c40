#include "sftmix/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sftmix/errors.hpp"

namespace sftmix {

std::vector<double> response_nll_batch(const Parameters& params,
                                       const std::vector<InstructionExample>& examples,
                                       const Tokenizer& tok) {
  TokenizedBatch batch = collate(examples, tok, params.config.max_seq_len);
  ForwardOutput out = forward(params, batch.tokens, batch.valid_len, batch.batch, batch.seq_len);
  const DenseArray& logits = out.logits.value();
  const std::size_t v = logits.dim(1);
  const int L = batch.seq_len;

  std::vector<double> nll(examples.size(), 0.0);
  for (std::size_t r = 0; r < examples.size(); ++r) {
    const int start = batch.response_start(static_cast<int>(r));
    const int n = batch.resp_len[r];
    double total = 0.0;
    for (int k = 0; k < n; ++k) {
      // y_k+1 sits at position start+k and is predicted from the previous row.
      const std::size_t pos = static_cast<std::size_t>(r) * L + start + k;
      const double* row = logits.data() + (pos - 1) * v;
      total += ad::log_sum_exp(row, v) - row[batch.tokens[pos]];
    }
    nll[r] = total / static_cast<double>(n);
  }
  return nll;
}

namespace {
constexpr std::size_t kEvalChunk = 64;
}  // namespace

double example_nll(const Parameters& params, const InstructionExample& example,
                   const Tokenizer& tok) {
  return response_nll_batch(params, {example}, tok)[0];
}

double perplexity(const Parameters& params, const InstructionExample& example,
                  const Tokenizer& tok) {
  return std::exp(example_nll(params, example, tok));
}

double confidence_from_perplexities(const std::vector<double>& perplexities) {
  if (perplexities.empty()) throw ContractError("confidence: at least one perplexity required");
  double total = 0.0;
  for (double p : perplexities) {
    if (!(p > 0.0) || !std::isfinite(p)) {
      throw InvalidInputError("confidence: perplexities must be finite and positive");
    }
    total += p;
  }
  return -(total / static_cast<double>(perplexities.size()));
}

std::vector<ConfidenceRecord> compute_confidence(const std::vector<const Parameters*>& checkpoints,
                                                 const std::vector<InstructionExample>& dataset,
                                                 const Tokenizer& tok) {
  if (checkpoints.empty()) throw ContractError("compute_confidence: at least one checkpoint");
  for (const Parameters* c : checkpoints) {
    if (!(c->config == checkpoints.front()->config)) {
      throw ConfigError("compute_confidence: checkpoints disagree on model config");
    }
  }

  std::vector<ConfidenceRecord> records(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    records[i].example_id = dataset[i].id;
    records[i].perplexities.reserve(checkpoints.size());
  }
  for (const Parameters* ckpt : checkpoints) {
    for (std::size_t begin = 0; begin < dataset.size(); begin += kEvalChunk) {
      const std::size_t end = std::min(begin + kEvalChunk, dataset.size());
      std::vector<InstructionExample> chunk(dataset.begin() + begin, dataset.begin() + end);
      std::vector<double> nll = response_nll_batch(*ckpt, chunk, tok);
      for (std::size_t i = 0; i < nll.size(); ++i) {
        records[begin + i].perplexities.push_back(std::exp(nll[i]));
      }
    }
  }
  for (auto& rec : records) rec.confidence = confidence_from_perplexities(rec.perplexities);
  return records;
}

ConfidenceSplit split_by_confidence(std::vector<ConfidenceRecord> records) {
  if (records.empty() || records.size() % 2 != 0) {
    throw ContractError("split: record count must be even and nonzero");
  }
  for (const auto& r : records) {
    if (!std::isfinite(r.confidence)) throw InvalidInputError("split: non-finite confidence");
  }
  std::sort(records.begin(), records.end(), [](const ConfidenceRecord& a, const ConfidenceRecord& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.example_id < b.example_id;  // deterministic, model-independent tie-break
  });
  ConfidenceSplit split;
  const std::size_t half = records.size() / 2;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (i < half ? split.confident_ids : split.unconfident_ids).push_back(records[i].example_id);
  }
  return split;
}

std::vector<EmbeddingRow> export_embeddings(const Parameters& params,
                                            const std::vector<InstructionExample>& dataset,
                                            const Tokenizer& tok) {
  std::vector<EmbeddingRow> rows;
  rows.reserve(dataset.size());
  const std::size_t d = static_cast<std::size_t>(params.config.d_model);
  for (std::size_t begin = 0; begin < dataset.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(begin + kEvalChunk, dataset.size());
    std::vector<InstructionExample> chunk(dataset.begin() + begin, dataset.begin() + end);
    TokenizedBatch batch = collate(chunk, tok, params.config.max_seq_len);
    ForwardOutput out = forward(params, batch.tokens, batch.valid_len, batch.batch, batch.seq_len);
    const DenseArray& hidden = out.hidden.value();
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      EmbeddingRow row;
      row.id = chunk[r].id;
      row.family = chunk[r].family;
      const std::size_t pos = r * batch.seq_len + (batch.valid_len[r] - 1);
      const double* src = hidden.data() + pos * d;
      row.vector.assign(src, src + d);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_confidence_jsonl(const std::filesystem::path& path,
                            const std::vector<ConfidenceRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& rec : records) {
    nlohmann::ordered_json j;
    j["id"] = rec.example_id;
    j["perplexities"] = rec.perplexities;
    j["confidence"] = rec.confidence;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<ConfidenceRecord> read_confidence_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open confidence file: " + path.string());
  std::vector<ConfidenceRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      ConfidenceRecord rec;
      rec.example_id = j.at("id").get<std::string>();
      rec.perplexities = j.at("perplexities").get<std::vector<double>>();
      rec.confidence = j.at("confidence").get<double>();
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void write_split_json(const std::filesystem::path& path, const ConfidenceSplit& split) {
  nlohmann::ordered_json j;
  j["confident"] = split.confident_ids;
  j["unconfident"] = split.unconfident_ids;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

ConfidenceSplit read_split_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open split file: " + path.string());
  try {
    nlohmann::json j = nlohmann::json::parse(in);
    ConfidenceSplit split;
    split.confident_ids = j.at("confident").get<std::vector<std::string>>();
    split.unconfident_ids = j.at("unconfident").get<std::vector<std::string>>();
    return split;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_embeddings_jsonl(const std::filesystem::path& path,
                            const std::vector<EmbeddingRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& row : rows) {
    nlohmann::ordered_json j;
    j["id"] = row.id;
    j["family"] = family_name(row.family);
    j["vector"] = row.vector;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace sftmix
