#include "sftmix/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "sftmix/rng.hpp"

namespace sftmix {

const char* family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::kCopy: return "copy";
    case TaskFamily::kReverse: return "reverse";
    case TaskFamily::kConstMap: return "const_map";
    case TaskFamily::kNoisy: return "noisy";
  }
  throw ContractError("family_name: unknown family");
}

TaskFamily family_from_name(const std::string& name) {
  if (name == "copy") return TaskFamily::kCopy;
  if (name == "reverse") return TaskFamily::kReverse;
  if (name == "const_map") return TaskFamily::kConstMap;
  if (name == "noisy") return TaskFamily::kNoisy;
  throw DataError("unknown task family: " + name);
}

std::string family_tag(TaskFamily f) {
  switch (f) {
    case TaskFamily::kCopy: return "cpy";
    case TaskFamily::kReverse: return "rev";
    case TaskFamily::kConstMap: return "map";
    case TaskFamily::kNoisy: return "rnd";
  }
  throw ContractError("family_tag: unknown family");
}

void CorpusSpec::validate() const {
  if (num_examples <= 0) throw ConfigError("CorpusSpec: num_examples must be positive");
  if (num_examples % 2 != 0) {
    throw ConfigError("CorpusSpec: num_examples must be even (median split needs equal halves)");
  }
  const double total = frac_copy + frac_reverse + frac_const_map + frac_noisy;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("CorpusSpec: family fractions must sum to 1");
  }
  if (frac_copy < 0 || frac_reverse < 0 || frac_const_map < 0 || frac_noisy < 0) {
    throw ConfigError("CorpusSpec: family fractions must be non-negative");
  }
  if (alphabet_size < 1 || alphabet_size > 26) {
    throw ConfigError("CorpusSpec: alphabet_size must be in [1,26]");
  }
  if (min_payload < 1 || max_payload < min_payload) {
    throw ConfigError("CorpusSpec: payload length bounds invalid");
  }
}

Tokenizer::Tokenizer(int alphabet_size) : alphabet_size_(alphabet_size) {
  if (alphabet_size < 1 || alphabet_size > 26) {
    throw ConfigError("Tokenizer: alphabet_size must be in [1,26]");
  }
}

std::vector<int> Tokenizer::tokenize(const std::string& text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char ch : text) {
    const int off = ch - 'a';
    if (off < 0 || off >= alphabet_size_) {
      throw InvalidInputError(std::string("tokenize: character '") + ch + "' outside alphabet");
    }
    ids.push_back(kNumSpecials + off);
  }
  return ids;
}

std::string Tokenizer::detokenize(const std::vector<int>& ids) const {
  std::string text;
  text.reserve(ids.size());
  for (int id : ids) {
    const int off = id - kNumSpecials;
    if (off < 0 || off >= alphabet_size_) {
      throw InvalidInputError("detokenize: id " + std::to_string(id) + " is not a letter token");
    }
    text.push_back(static_cast<char>('a' + off));
  }
  return text;
}

std::string family_response(TaskFamily family, const std::string& payload,
                            const std::vector<int>& subst) {
  switch (family) {
    case TaskFamily::kCopy:
      return payload;
    case TaskFamily::kReverse:
      return std::string(payload.rbegin(), payload.rend());
    case TaskFamily::kConstMap: {
      std::string out;
      out.reserve(payload.size());
      for (char ch : payload) {
        const int off = ch - 'a';
        if (off < 0 || static_cast<std::size_t>(off) >= subst.size()) {
          throw InvalidInputError("family_response: payload character outside substitution map");
        }
        out.push_back(static_cast<char>('a' + subst[off]));
      }
      return out;
    }
    case TaskFamily::kNoisy:
      throw ContractError("family_response: noisy responses are sampled, not derived");
  }
  throw ContractError("family_response: unknown family");
}

namespace {

// Largest-remainder apportionment of n examples over the four families.
std::array<int, kNumFamilies> family_counts(const CorpusSpec& spec) {
  const std::array<double, kNumFamilies> fracs{spec.frac_copy, spec.frac_reverse,
                                               spec.frac_const_map, spec.frac_noisy};
  std::array<int, kNumFamilies> counts{};
  std::array<double, kNumFamilies> remainders{};
  int assigned = 0;
  for (int f = 0; f < kNumFamilies; ++f) {
    const double exact = fracs[f] * spec.num_examples;
    counts[f] = static_cast<int>(std::floor(exact));
    remainders[f] = exact - counts[f];
    assigned += counts[f];
  }
  std::array<int, kNumFamilies> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainders[a] > remainders[b]; });
  for (int i = 0; assigned < spec.num_examples; ++i, ++assigned) counts[order[i % 4]] += 1;
  return counts;
}

std::string random_payload(int len, int alphabet, SeededRng& rng) {
  std::string s(static_cast<std::size_t>(len), 'a');
  for (auto& ch : s) ch = static_cast<char>('a' + rng.below(static_cast<std::uint64_t>(alphabet)));
  return s;
}

}  // namespace

std::vector<InstructionExample> generate_corpus(const CorpusSpec& spec) {
  spec.validate();

  // Fixed substitution alphabet for const_map, one permutation per corpus.
  SeededRng map_rng = SeededRng::derive(spec.seed, {0x6d6170ull});  // "map"
  std::vector<int> subst(static_cast<std::size_t>(spec.alphabet_size));
  std::iota(subst.begin(), subst.end(), 0);
  map_rng.shuffle(subst);

  // Family per index: counts matching the fractions, shuffled once.
  const auto counts = family_counts(spec);
  std::vector<TaskFamily> families;
  families.reserve(static_cast<std::size_t>(spec.num_examples));
  for (int f = 0; f < kNumFamilies; ++f) {
    families.insert(families.end(), static_cast<std::size_t>(counts[f]),
                    static_cast<TaskFamily>(f));
  }
  SeededRng fam_rng = SeededRng::derive(spec.seed, {0x66616d756c79ull});
  fam_rng.shuffle(families);

  std::vector<InstructionExample> out;
  out.reserve(families.size());
  const int span = spec.max_payload - spec.min_payload + 1;
  for (std::size_t i = 0; i < families.size(); ++i) {
    SeededRng rng = SeededRng::derive(spec.seed, {0x6578ull, static_cast<std::uint64_t>(i)});
    InstructionExample ex;
    char idbuf[24];
    std::snprintf(idbuf, sizeof idbuf, "ex%06zu", i);
    ex.id = idbuf;
    ex.family = families[i];
    const int payload_len = spec.min_payload + static_cast<int>(rng.below(span));
    const std::string payload = random_payload(payload_len, spec.alphabet_size, rng);
    ex.instruction = family_tag(ex.family) + payload;
    if (ex.family == TaskFamily::kNoisy) {
      const int resp_len = spec.min_payload + static_cast<int>(rng.below(span));
      ex.response = random_payload(resp_len, spec.alphabet_size, rng);
    } else {
      ex.response = family_response(ex.family, payload, subst);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_corpus_jsonl(const std::filesystem::path& path,
                        const std::vector<InstructionExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& ex : examples) {
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    j["family"] = family_name(ex.family);
    j["instruction"] = ex.instruction;
    j["response"] = ex.response;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<InstructionExample> read_corpus_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  std::vector<InstructionExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    InstructionExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.family = family_from_name(j.at("family").get<std::string>());
    ex.instruction = j.at("instruction").get<std::string>();
    ex.response = j.at("response").get<std::string>();
    out.push_back(std::move(ex));
  }
  return out;
}

TokenizedBatch collate(const std::vector<InstructionExample>& examples, const Tokenizer& tok,
                       int max_len) {
  if (examples.empty()) throw ContractError("collate: empty batch");
  TokenizedBatch batch;
  batch.batch = static_cast<int>(examples.size());

  std::vector<std::vector<int>> xs, ys;
  xs.reserve(examples.size());
  ys.reserve(examples.size());
  int longest = 0;
  for (const auto& ex : examples) {
    std::vector<int> x = tok.tokenize(ex.instruction);
    std::vector<int> y = tok.tokenize(ex.response);
    if (x.empty() || y.empty()) {
      throw InvalidInputError("collate: empty instruction or response in " + ex.id);
    }
    const int row_len = static_cast<int>(x.size() + y.size()) + 3;  // BOS + SEP + EOS
    if (row_len > max_len) {
      throw LengthError("collate: example " + ex.id + " needs " + std::to_string(row_len) +
                        " tokens but max_len is " + std::to_string(max_len));
    }
    longest = std::max(longest, row_len);
    xs.push_back(std::move(x));
    ys.push_back(std::move(y));
  }
  batch.seq_len = longest;

  const std::size_t total = static_cast<std::size_t>(batch.batch) * longest;
  batch.tokens.assign(total, Tokenizer::kPad);
  batch.response_mask.assign(total, 0);
  for (std::size_t r = 0; r < examples.size(); ++r) {
    int* row = batch.tokens.data() + r * longest;
    std::uint8_t* mask = batch.response_mask.data() + r * longest;
    int p = 0;
    row[p++] = Tokenizer::kBos;
    for (int t : xs[r]) row[p++] = t;
    row[p++] = Tokenizer::kSep;
    for (int t : ys[r]) {
      row[p] = t;
      mask[p] = 1;
      ++p;
    }
    row[p] = Tokenizer::kEos;
    mask[p] = 1;
    ++p;
    batch.valid_len.push_back(p);
    batch.instr_len.push_back(static_cast<int>(xs[r].size()));
    batch.resp_len.push_back(static_cast<int>(ys[r].size()));
    batch.ids.push_back(examples[r].id);
  }
  return batch;
}

}  // namespace sftmix
