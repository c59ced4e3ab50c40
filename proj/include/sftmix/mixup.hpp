#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sftmix/autodiff.hpp"
#include "sftmix/corpus.hpp"
#include "sftmix/dynamics.hpp"
#include "sftmix/model.hpp"
#include "sftmix/rng.hpp"

namespace sftmix {

struct MixupPair {
  std::string confident_id;
  std::string unconfident_id;
  double lambda = 0.0;
  int trunc_len = 0;  // min of the two response lengths
};

struct MixupBatch {
  std::vector<MixupPair> pairs;
};

using IdPair = std::pair<std::string, std::string>;  // (confident, unconfident)

// One epoch of pairings: both halves shuffled independently, zipped, and
// chunked into batches of batch_size/2 pairs. Every id appears in exactly one
// pair. Requires equal halves and an even batch size.
std::vector<std::vector<IdPair>> pair_epoch(const ConfidenceSplit& split, int batch_size,
                                            SeededRng& rng);

// lambda ~ Beta(alpha, alpha); one draw per pair per batch.
double sample_lambda(double alpha, SeededRng& rng);

// Materializes one batch of pairs: a lambda per pair (drawn in pair order)
// and the truncation length N' = min of the two response lengths.
MixupBatch make_mixup_batch(const std::vector<IdPair>& pairs,
                            const std::vector<InstructionExample>& dataset, double alpha,
                            SeededRng& rng);

// Contract-level interpolation of aligned response positions:
//   z_n = lambda*zc_n + (1-lambda)*zu_n
//   y_n = lambda*onehot(yc_n) + (1-lambda)*onehot(yu_n)
// over rows 1..N' with N' = min(len(zc), len(zu)).
struct InterpolatedTargets {
  DenseArray z;  // [N' x d]
  DenseArray y;  // [N' x V], rows sum to 1, at most two nonzero entries
};
InterpolatedTargets interpolate(const DenseArray& zc, const DenseArray& zu,
                                const std::vector<int>& yc_tokens,
                                const std::vector<int>& yu_tokens, double lambda, int vocab_size);

// Pair of rows inside one collated batch (confident and unconfident example
// indices) plus its interpolation coefficient.
struct PairRows {
  int conf_row = 0;
  int unconf_row = 0;
  double lambda = 0.0;
};

// ell_Mixup over a shared forward pass: gathers each pair's last-layer states
// at response positions 1..N', interpolates, maps through the head and takes
// the soft cross-entropy. Token-mean over all interpolated positions unless
// sum_reduction is set. Gradients flow into both examples and into the head.
ad::Var mixup_loss_from_forward(const ForwardOutput& fwd, const Parameters& params,
                                const TokenizedBatch& batch, const std::vector<PairRows>& pairs,
                                bool sum_reduction = false);

// Standalone form: runs its own forward over the paired examples.
// conf[i] is paired with unconf[i] using lambdas[i].
ad::Var mixup_loss(const Parameters& params, const std::vector<InstructionExample>& conf,
                   const std::vector<InstructionExample>& unconf,
                   const std::vector<double>& lambdas, const Tokenizer& tok,
                   bool sum_reduction = false);

// Same, driven by a materialized MixupBatch (ids resolved against dataset).
ad::Var mixup_loss(const Parameters& params, const std::vector<InstructionExample>& dataset,
                   const MixupBatch& batch, const Tokenizer& tok, bool sum_reduction = false);

// ell_SFTMix = ell_NTP + mu * ell_Mixup. mu must be >= 0.
ad::Var sftmix_loss(const ad::Var& ntp_loss, const ad::Var& mixup_loss, double mu);
double sftmix_loss_value(double ntp_loss, double mixup_loss, double mu);

// Closed-form head gradient at one interpolated position,
//   grad_W H(y, softmax(z^T W)) = outer(z, softmax(z^T W) - y),
// compared against reverse-mode autodiff and finite differences.
struct HeadGradientReport {
  DenseArray closed_form;      // [d x V]
  double rel_err_autodiff = 0.0;
  double rel_err_finite_diff = 0.0;
};
HeadGradientReport head_gradient_check(const DenseArray& z, const DenseArray& y,
                                       const DenseArray& w);

// || softmax(z_mix^T W) - [lambda*softmax(zc^T W) + (1-lambda)*softmax(zu^T W)] ||_inf
// with z_mix = lambda*zc + (1-lambda)*zu. Positive in general: the softmax of
// a mixture is not the mixture of softmaxes.
double non_decomposition_witness(const DenseArray& zc, const DenseArray& zu, const DenseArray& w,
                                 double lambda);

}  // namespace sftmix
