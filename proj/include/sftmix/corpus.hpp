#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sftmix/errors.hpp"

namespace sftmix {

// Task families with controllably different learnability. The first three
// are deterministic maps of the payload; "noisy" responses are independent
// random strings with nothing to learn.
enum class TaskFamily { kCopy, kReverse, kConstMap, kNoisy };

const char* family_name(TaskFamily f);
TaskFamily family_from_name(const std::string& name);  // throws DataError
constexpr int kNumFamilies = 4;

struct InstructionExample {
  std::string id;
  TaskFamily family = TaskFamily::kCopy;
  std::string instruction;  // task tag + payload
  std::string response;
};

struct CorpusSpec {
  int num_examples = 2048;  // must be even; the median split needs equal halves
  double frac_copy = 0.3;
  double frac_reverse = 0.3;
  double frac_const_map = 0.2;
  double frac_noisy = 0.2;
  int alphabet_size = 26;
  int min_payload = 4;
  int max_payload = 16;
  std::uint64_t seed = 7;

  void validate() const;  // throws ConfigError
};

// Character-level tokenizer over a fixed lowercase alphabet plus reserved
// specials. Ids: PAD=0, BOS=1, SEP=2, EOS=3, then 'a'.. in order. tokenize
// and detokenize are inverse bijections on valid text; specials are never
// produced by tokenize.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kSep = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecials = 4;

  explicit Tokenizer(int alphabet_size = 26);

  int alphabet_size() const { return alphabet_size_; }
  // Smallest vocab that holds the alphabet and the specials.
  int min_vocab_size() const { return kNumSpecials + alphabet_size_; }

  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& ids) const;

 private:
  int alphabet_size_;
};

// The deterministic response for a family given its payload. subst maps
// alphabet index -> alphabet index and is only consulted for kConstMap.
// kNoisy has no deterministic response and is rejected with ContractError.
std::string family_response(TaskFamily family, const std::string& payload,
                            const std::vector<int>& subst);

// Instruction = 3-letter task tag + payload, so the family is inferable from
// the instruction alone.
std::string family_tag(TaskFamily f);

// Deterministic given spec.seed; per-example streams are derived from
// (seed, index) so generation order never couples examples.
std::vector<InstructionExample> generate_corpus(const CorpusSpec& spec);

// JSON Lines with fields {"id","family","instruction","response"}, UTF-8,
// generation order. Byte-deterministic.
void write_corpus_jsonl(const std::filesystem::path& path,
                        const std::vector<InstructionExample>& examples);
std::vector<InstructionExample> read_corpus_jsonl(const std::filesystem::path& path);

// Row layout: [BOS, X..., SEP, Y..., EOS, PAD...]. response_mask marks the
// positions whose tokens the loss predicts: Y tokens and the closing EOS.
struct TokenizedBatch {
  int batch = 0;
  int seq_len = 0;
  std::vector<int> tokens;              // batch*seq_len
  std::vector<std::uint8_t> response_mask;  // batch*seq_len
  std::vector<int> valid_len;           // per row: M+N+3
  std::vector<int> instr_len;           // M_i
  std::vector<int> resp_len;            // N_i
  std::vector<std::string> ids;

  // Position of y_1 within row r (= M_r + 2).
  int response_start(int r) const { return instr_len[r] + 2; }
};

TokenizedBatch collate(const std::vector<InstructionExample>& examples, const Tokenizer& tok,
                       int max_len);

}  // namespace sftmix
