#include "sftmix/model.hpp"

#include <cmath>
#include <string>

#include "sftmix/errors.hpp"
#include "sftmix/rng.hpp"

namespace sftmix {

void ModelConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("ModelConfig: vocab_size must be positive");
  if (d_model <= 0) throw ConfigError("ModelConfig: d_model must be positive");
  if (n_layers <= 0) throw ConfigError("ModelConfig: n_layers must be positive");
  if (n_heads <= 0) throw ConfigError("ModelConfig: n_heads must be positive");
  if (d_ff <= 0) throw ConfigError("ModelConfig: d_ff must be positive");
  if (max_seq_len <= 0) throw ConfigError("ModelConfig: max_seq_len must be positive");
  if (d_model % n_heads != 0) throw ConfigError("ModelConfig: n_heads must divide d_model");
}

std::vector<std::pair<std::string, ad::Var>> Parameters::named() const {
  std::vector<std::pair<std::string, ad::Var>> out;
  out.emplace_back("wte", wte);
  out.emplace_back("wpe", wpe);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    const Layer& l = layers[i];
    out.emplace_back(p + "ln1_g", l.ln1_g);
    out.emplace_back(p + "ln1_b", l.ln1_b);
    out.emplace_back(p + "wq", l.wq);
    out.emplace_back(p + "wk", l.wk);
    out.emplace_back(p + "wv", l.wv);
    out.emplace_back(p + "wo", l.wo);
    out.emplace_back(p + "ln2_g", l.ln2_g);
    out.emplace_back(p + "ln2_b", l.ln2_b);
    out.emplace_back(p + "wff1", l.wff1);
    out.emplace_back(p + "wff2", l.wff2);
  }
  out.emplace_back("lnf_g", lnf_g);
  out.emplace_back("lnf_b", lnf_b);
  out.emplace_back("head_w", head_w);
  return out;
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, var] : named()) n += var.value().size();
  return n;
}

namespace {

DenseArray normal_array(std::vector<std::size_t> shape, double std_dev, SeededRng& rng) {
  DenseArray a(std::move(shape));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std_dev * rng.normal();
  return a;
}

}  // namespace

Parameters init_parameters(const ModelConfig& config) {
  config.validate();
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto ff = static_cast<std::size_t>(config.d_ff);
  const auto l = static_cast<std::size_t>(config.max_seq_len);
  const double base_std = 0.02;
  const double resid_std = base_std / std::sqrt(2.0 * config.n_layers);

  SeededRng rng = SeededRng::derive(config.init_seed, {0x6d6f64656cull});  // "model"
  Parameters p;
  p.config = config;
  p.wte = ad::leaf(normal_array({v, d}, base_std, rng));
  p.wpe = ad::leaf(normal_array({l, d}, base_std, rng));
  p.layers.resize(config.n_layers);
  for (auto& layer : p.layers) {
    layer.ln1_g = ad::leaf(DenseArray::full({d}, 1.0));
    layer.ln1_b = ad::leaf(DenseArray({d}));
    layer.wq = ad::leaf(normal_array({d, d}, base_std, rng));
    layer.wk = ad::leaf(normal_array({d, d}, base_std, rng));
    layer.wv = ad::leaf(normal_array({d, d}, base_std, rng));
    layer.wo = ad::leaf(normal_array({d, d}, resid_std, rng));
    layer.ln2_g = ad::leaf(DenseArray::full({d}, 1.0));
    layer.ln2_b = ad::leaf(DenseArray({d}));
    layer.wff1 = ad::leaf(normal_array({d, ff}, base_std, rng));
    layer.wff2 = ad::leaf(normal_array({ff, d}, resid_std, rng));
  }
  p.lnf_g = ad::leaf(DenseArray::full({d}, 1.0));
  p.lnf_b = ad::leaf(DenseArray({d}));
  p.head_w = ad::leaf(normal_array({d, v}, base_std, rng));
  return p;
}

ForwardOutput forward(const Parameters& params, const std::vector<int>& tokens,
                      const std::vector<int>& valid_len, int batch, int seq_len) {
  const ModelConfig& cfg = params.config;
  if (batch <= 0 || seq_len <= 0) throw ContractError("forward: empty batch");
  if (tokens.size() != static_cast<std::size_t>(batch) * seq_len) {
    throw ShapeError("forward: token grid does not match batch x seq_len");
  }
  if (seq_len > cfg.max_seq_len) {
    throw LengthError("forward: seq_len exceeds max_seq_len");
  }
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) throw InvalidInputError("forward: token id out of range");
  }
  if (valid_len.size() != static_cast<std::size_t>(batch)) {
    throw ShapeError("forward: one valid length per row required");
  }

  std::vector<int> positions(tokens.size());
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < seq_len; ++i) positions[static_cast<std::size_t>(b) * seq_len + i] = i;
  }

  ad::Var x = ad::add(ad::embedding_rows(params.wte, tokens),
                      ad::embedding_rows(params.wpe, positions));
  for (const auto& layer : params.layers) {
    ad::Var h = ad::layer_norm(x, layer.ln1_g, layer.ln1_b);
    ad::Var attn = ad::causal_attention(ad::matmul(h, layer.wq), ad::matmul(h, layer.wk),
                                        ad::matmul(h, layer.wv), cfg.n_heads, valid_len, batch,
                                        seq_len);
    x = ad::add(x, ad::matmul(attn, layer.wo));
    ad::Var h2 = ad::layer_norm(x, layer.ln2_g, layer.ln2_b);
    x = ad::add(x, ad::matmul(ad::gelu(ad::matmul(h2, layer.wff1)), layer.wff2));
  }

  ForwardOutput out;
  out.hidden = ad::layer_norm(x, params.lnf_g, params.lnf_b);
  out.logits = lm_head(params, out.hidden);
  out.batch = batch;
  out.seq_len = seq_len;
  return out;
}

ad::Var lm_head(const Parameters& params, const ad::Var& hidden) {
  if (hidden.value().rank() != 2 ||
      hidden.value().dim(1) != static_cast<std::size_t>(params.config.d_model)) {
    throw ShapeError("lm_head: last axis must equal d_model");
  }
  return ad::matmul(hidden, params.head_w);
}

}  // namespace sftmix
