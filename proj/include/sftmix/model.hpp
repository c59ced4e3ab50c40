#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sftmix/autodiff.hpp"
#include "sftmix/dense_array.hpp"

namespace sftmix {

struct ModelConfig {
  int vocab_size = 64;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_seq_len = 128;
  std::uint64_t init_seed = 1;

  void validate() const;  // throws ConfigError
  bool operator==(const ModelConfig&) const = default;
};

// Model weights as named autodiff leaves. Snapshots are immutable from the
// reader's point of view; only the trainer mutates values between steps.
struct Parameters {
  ModelConfig config;

  ad::Var wte;  // [V x d_model]
  ad::Var wpe;  // [max_seq_len x d_model]
  struct Layer {
    ad::Var ln1_g, ln1_b;
    ad::Var wq, wk, wv, wo;  // [d x d]
    ad::Var ln2_g, ln2_b;
    ad::Var wff1;  // [d x d_ff]
    ad::Var wff2;  // [d_ff x d]
  };
  std::vector<Layer> layers;
  ad::Var lnf_g, lnf_b;
  ad::Var head_w;  // [d_model x V]; the only map from hidden states to logits

  // (name, leaf) pairs in a stable order; the optimizer, the checkpoint
  // format and gradient reductions all iterate in this order.
  std::vector<std::pair<std::string, ad::Var>> named() const;
  std::size_t scalar_count() const;
};

// Scaled-normal init: std 0.02, residual projections (wo, wff2) scaled by
// 1/sqrt(2*n_layers), layer-norm gain 1 / bias 0. Deterministic in init_seed.
Parameters init_parameters(const ModelConfig& config);

struct ForwardOutput {
  ad::Var hidden;  // [batch*seq_len x d_model], post final layer norm
  ad::Var logits;  // [batch*seq_len x vocab], hidden @ head_w
  int batch = 0;
  int seq_len = 0;
};

// Causal forward pass over a padded [batch x seq_len] token grid (flattened
// row-major). valid_len[b] marks the number of real positions in row b;
// padding never acts as an attention key, so real positions are unaffected
// by batch padding.
ForwardOutput forward(const Parameters& params, const std::vector<int>& tokens,
                      const std::vector<int>& valid_len, int batch, int seq_len);

// The bias-free head map, identical to the one used inside forward().
ad::Var lm_head(const Parameters& params, const ad::Var& hidden);

}  // namespace sftmix
