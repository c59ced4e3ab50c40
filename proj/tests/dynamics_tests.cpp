#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sftmix/dynamics.hpp"
#include "sftmix/errors.hpp"
#include "support/test_util.hpp"

using namespace sftmix;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 64;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 32;
  c.init_seed = 3;
  return c;
}

// All-zero transformer with a chosen final layer-norm bias: every hidden row
// becomes that bias vector, so logits are position-independent and fully
// controlled through head_w.
Parameters constant_logit_model(const ModelConfig& config, const std::vector<double>& logit_row) {
  Parameters p = init_parameters(config);
  for (auto& [name, var] : p.named()) var.mutable_value().fill(0.0);
  p.lnf_b.mutable_value()[0] = 1.0;  // hidden = e_0 everywhere
  DenseArray& w = p.head_w.mutable_value();
  for (int k = 0; k < config.vocab_size; ++k) w.at2(0, k) = logit_row[k];
  return p;
}

}  // namespace

TEST_CASE("example_nll of a uniform predictor is ln V") {
  ModelConfig c = tiny_config();
  Parameters p = constant_logit_model(c, std::vector<double>(64, 0.0));
  Tokenizer tok(26);
  InstructionExample ex{"e1", TaskFamily::kCopy, "cpyabcd", "abcd"};
  CHECK(example_nll(p, ex, tok) == doctest::Approx(std::log(64.0)).epsilon(1e-12));
  CHECK(perplexity(p, ex, tok) == doctest::Approx(64.0).epsilon(1e-10));
}

TEST_CASE("example_nll approaches zero when the model is extremely confident") {
  // +40 logit margin on every correct response token.
  ModelConfig c = tiny_config();
  Tokenizer tok(26);
  InstructionExample ex{"e1", TaskFamily::kCopy, "cpyaa", "aa"};
  std::vector<double> row(64, 0.0);
  row[tok.tokenize("a")[0]] = 40.0;
  Parameters p = constant_logit_model(c, row);
  CHECK(example_nll(p, ex, tok) < 1e-12);
}

TEST_CASE("example_nll single-token response with probability 1/4") {
  ModelConfig c = tiny_config();
  Tokenizer tok(26);
  // Four tokens share all the mass; the true token is one of them.
  std::vector<double> row(64, -1000.0);
  const int truth = tok.tokenize("q")[0];
  row[truth] = 0.0;
  row[truth + 1] = 0.0;
  row[truth + 2] = 0.0;
  row[truth + 3] = 0.0;
  Parameters p = constant_logit_model(c, row);
  InstructionExample ex{"e1", TaskFamily::kCopy, "cpyq", "q"};
  CHECK(example_nll(p, ex, tok) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(perplexity(p, ex, tok) == doctest::Approx(4.0).epsilon(1e-10));
}

TEST_CASE("confidence arithmetic") {
  CHECK(confidence_from_perplexities({2.0, 4.0}) == doctest::Approx(-3.0).epsilon(1e-15));
  CHECK(confidence_from_perplexities({5.5}) == doctest::Approx(-5.5).epsilon(1e-15));
  CHECK_THROWS_AS(confidence_from_perplexities({}), ContractError);
  CHECK_THROWS_AS(confidence_from_perplexities({1.0, -2.0}), InvalidInputError);
}

TEST_CASE("compute_confidence orders outputs and validates configs") {
  ModelConfig c = tiny_config();
  Parameters p1 = init_parameters(c);
  Parameters p2 = init_parameters(c);
  CorpusSpec spec;
  spec.num_examples = 6;
  spec.min_payload = 2;
  spec.max_payload = 4;
  spec.seed = 17;
  const auto dataset = generate_corpus(spec);
  Tokenizer tok(26);

  const auto records = compute_confidence({&p1, &p2}, dataset, tok);
  REQUIRE(records.size() == dataset.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].example_id == dataset[i].id);
    REQUIRE(records[i].perplexities.size() == 2);
    const double mean =
        (records[i].perplexities[0] + records[i].perplexities[1]) / 2.0;
    CHECK(records[i].confidence == doctest::Approx(-mean).epsilon(1e-15));
  }

  ModelConfig other = c;
  other.d_model = 16;
  other.n_heads = 4;
  Parameters p3 = init_parameters(other);
  CHECK_THROWS_AS(compute_confidence({&p1, &p3}, dataset, tok), ConfigError);
}

TEST_CASE("split_by_confidence contract and determinism") {
  auto rec = [](const std::string& id, double conf) {
    ConfidenceRecord r;
    r.example_id = id;
    r.perplexities = {-conf};
    r.confidence = conf;
    return r;
  };
  // {a:-1, b:-2, c:-3, d:-4} -> confident {a,b}.
  auto split = split_by_confidence({rec("a", -1), rec("b", -2), rec("c", -3), rec("d", -4)});
  CHECK(split.confident_ids == std::vector<std::string>{"a", "b"});
  CHECK(split.unconfident_ids == std::vector<std::string>{"c", "d"});

  // All-equal confidences break ties by ascending id.
  auto tie = split_by_confidence({rec("z", -1), rec("w", -1), rec("y", -1), rec("x", -1)});
  CHECK(tie.confident_ids == std::vector<std::string>{"w", "x"});
  CHECK(tie.unconfident_ids == std::vector<std::string>{"y", "z"});

  // Sizes equal; min(confident) >= max(unconfident).
  auto s2 = split_by_confidence({rec("a", -1), rec("b", -1), rec("c", -5), rec("d", -5)});
  CHECK(s2.confident_ids.size() == 2);
  CHECK(s2.unconfident_ids.size() == 2);

  // Invariant to input order.
  auto s3 = split_by_confidence({rec("d", -4), rec("a", -1), rec("c", -3), rec("b", -2)});
  CHECK(s3.confident_ids == split.confident_ids);
  CHECK(s3.unconfident_ids == split.unconfident_ids);

  CHECK_THROWS_AS(split_by_confidence({rec("a", -1)}), ContractError);
}

TEST_CASE("export_embeddings shape, determinism, count") {
  ModelConfig c = tiny_config();
  Parameters p = init_parameters(c);
  Tokenizer tok(26);
  std::vector<InstructionExample> dataset{
      {"a", TaskFamily::kCopy, "cpyab", "ab"},
      {"b", TaskFamily::kCopy, "cpyab", "ab"},  // identical content
      {"c", TaskFamily::kReverse, "revxyz", "zyx"},
  };
  const auto rows = export_embeddings(p, dataset, tok);
  REQUIRE(rows.size() == dataset.size());
  for (const auto& row : rows) CHECK(row.vector.size() == static_cast<std::size_t>(c.d_model));
  for (std::size_t i = 0; i < rows[0].vector.size(); ++i) {
    CHECK(rows[0].vector[i] == rows[1].vector[i]);  // identical examples, identical vectors
  }
}

TEST_CASE("confidence and split files round-trip") {
  test::TempDir tmp("dyn");
  std::vector<ConfidenceRecord> records;
  for (int i = 0; i < 4; ++i) {
    ConfidenceRecord r;
    r.example_id = "ex" + std::to_string(i);
    r.perplexities = {1.5 + i, 2.5 + i};
    r.confidence = -(r.perplexities[0] + r.perplexities[1]) / 2.0;
    records.push_back(r);
  }
  write_confidence_jsonl(tmp / "conf.jsonl", records);
  const auto back = read_confidence_jsonl(tmp / "conf.jsonl");
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].example_id == records[i].example_id);
    CHECK(back[i].perplexities == records[i].perplexities);
    CHECK(back[i].confidence == records[i].confidence);  // bitwise through JSON
  }

  const ConfidenceSplit split = split_by_confidence(back);
  write_split_json(tmp / "split.json", split);
  const ConfidenceSplit split_back = read_split_json(tmp / "split.json");
  CHECK(split_back.confident_ids == split.confident_ids);
  CHECK(split_back.unconfident_ids == split.unconfident_ids);
}
