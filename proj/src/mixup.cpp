#include "sftmix/mixup.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "sftmix/errors.hpp"
#include "sftmix/finite_diff.hpp"

namespace sftmix {

std::vector<std::vector<IdPair>> pair_epoch(const ConfidenceSplit& split, int batch_size,
                                            SeededRng& rng) {
  if (split.confident_ids.size() != split.unconfident_ids.size()) {
    throw ContractError("pair_epoch: confident and unconfident halves must be the same size");
  }
  if (batch_size <= 0 || batch_size % 2 != 0) {
    throw ConfigError("pair_epoch: batch size must be positive and even");
  }
  std::vector<std::string> conf = split.confident_ids;
  std::vector<std::string> unconf = split.unconfident_ids;
  rng.shuffle(conf);
  rng.shuffle(unconf);

  const std::size_t pairs_per_batch = static_cast<std::size_t>(batch_size) / 2;
  std::vector<std::vector<IdPair>> batches;
  for (std::size_t i = 0; i < conf.size(); i += pairs_per_batch) {
    std::vector<IdPair> batch;
    const std::size_t end = std::min(i + pairs_per_batch, conf.size());
    for (std::size_t j = i; j < end; ++j) batch.emplace_back(conf[j], unconf[j]);
    batches.push_back(std::move(batch));
  }
  return batches;
}

double sample_lambda(double alpha, SeededRng& rng) { return sample_beta(alpha, rng); }

MixupBatch make_mixup_batch(const std::vector<IdPair>& pairs,
                            const std::vector<InstructionExample>& dataset, double alpha,
                            SeededRng& rng) {
  std::unordered_map<std::string, const InstructionExample*> by_id;
  for (const auto& ex : dataset) by_id[ex.id] = &ex;
  MixupBatch batch;
  batch.pairs.reserve(pairs.size());
  for (const auto& [cid, uid] : pairs) {
    auto ci = by_id.find(cid);
    auto ui = by_id.find(uid);
    if (ci == by_id.end() || ui == by_id.end()) {
      throw DataError("make_mixup_batch: pair id not in dataset");
    }
    MixupPair pair;
    pair.confident_id = cid;
    pair.unconfident_id = uid;
    pair.lambda = sample_lambda(alpha, rng);
    pair.trunc_len = static_cast<int>(
        std::min(ci->second->response.size(), ui->second->response.size()));
    batch.pairs.push_back(std::move(pair));
  }
  return batch;
}

InterpolatedTargets interpolate(const DenseArray& zc, const DenseArray& zu,
                                const std::vector<int>& yc_tokens,
                                const std::vector<int>& yu_tokens, double lambda,
                                int vocab_size) {
  if (zc.rank() != 2 || zu.rank() != 2) throw ShapeError("interpolate: rank-2 states required");
  if (zc.dim(1) != zu.dim(1)) throw ShapeError("interpolate: hidden dimensions disagree");
  if (yc_tokens.size() != zc.dim(0) || yu_tokens.size() != zu.dim(0)) {
    throw ShapeError("interpolate: one token per state row required");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw InvalidInputError("interpolate: lambda outside [0,1]");
  }
  const std::size_t n = std::min(zc.dim(0), zu.dim(0));
  const std::size_t d = zc.dim(1);
  const std::size_t v = static_cast<std::size_t>(vocab_size);

  InterpolatedTargets out;
  out.z = DenseArray({n, d});
  out.y = DenseArray({n, v});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      out.z.at2(r, c) = lambda * zc.at2(r, c) + (1.0 - lambda) * zu.at2(r, c);
    }
    const int a = yc_tokens[r], b = yu_tokens[r];
    if (a < 0 || static_cast<std::size_t>(a) >= v || b < 0 || static_cast<std::size_t>(b) >= v) {
      throw InvalidInputError("interpolate: token id out of range");
    }
    // Coinciding tokens naturally collapse to a single unit entry.
    out.y.at2(r, a) += lambda;
    out.y.at2(r, b) += 1.0 - lambda;
  }
  return out;
}

ad::Var mixup_loss_from_forward(const ForwardOutput& fwd, const Parameters& params,
                                const TokenizedBatch& batch, const std::vector<PairRows>& pairs,
                                bool sum_reduction) {
  if (pairs.empty()) throw ContractError("mixup_loss: at least one pair required");
  const int L = batch.seq_len;

  std::vector<std::size_t> conf_rows, unconf_rows;
  std::vector<int> tok_c, tok_u;
  std::vector<double> lam;
  for (const PairRows& p : pairs) {
    if (p.conf_row < 0 || p.conf_row >= batch.batch || p.unconf_row < 0 ||
        p.unconf_row >= batch.batch) {
      throw ContractError("mixup_loss: pair row outside batch");
    }
    const int trunc = std::min(batch.resp_len[p.conf_row], batch.resp_len[p.unconf_row]);
    const int start_c = batch.response_start(p.conf_row);
    const int start_u = batch.response_start(p.unconf_row);
    for (int k = 0; k < trunc; ++k) {
      // Z_n lives one position before token y_n.
      conf_rows.push_back(static_cast<std::size_t>(p.conf_row) * L + start_c - 1 + k);
      unconf_rows.push_back(static_cast<std::size_t>(p.unconf_row) * L + start_u - 1 + k);
      tok_c.push_back(batch.tokens[static_cast<std::size_t>(p.conf_row) * L + start_c + k]);
      tok_u.push_back(batch.tokens[static_cast<std::size_t>(p.unconf_row) * L + start_u + k]);
      lam.push_back(p.lambda);
    }
  }

  ad::Var z_mix = ad::mix_rows(ad::gather_rows(fwd.hidden, conf_rows),
                               ad::gather_rows(fwd.hidden, unconf_rows), lam);
  ad::Var logits = lm_head(params, z_mix);
  const double divisor = sum_reduction ? 1.0 : static_cast<double>(lam.size());
  return ad::soft_pair_nll_rows(logits, tok_c, tok_u, lam, divisor);
}

ad::Var mixup_loss(const Parameters& params, const std::vector<InstructionExample>& conf,
                   const std::vector<InstructionExample>& unconf,
                   const std::vector<double>& lambdas, const Tokenizer& tok,
                   bool sum_reduction) {
  if (conf.size() != unconf.size() || conf.size() != lambdas.size()) {
    throw ContractError("mixup_loss: paired inputs must have equal lengths");
  }
  std::vector<InstructionExample> combined = conf;
  combined.insert(combined.end(), unconf.begin(), unconf.end());
  TokenizedBatch batch = collate(combined, tok, params.config.max_seq_len);
  ForwardOutput fwd = forward(params, batch.tokens, batch.valid_len, batch.batch, batch.seq_len);
  std::vector<PairRows> pairs;
  for (std::size_t i = 0; i < conf.size(); ++i) {
    pairs.push_back({static_cast<int>(i), static_cast<int>(conf.size() + i), lambdas[i]});
  }
  return mixup_loss_from_forward(fwd, params, batch, pairs, sum_reduction);
}

ad::Var mixup_loss(const Parameters& params, const std::vector<InstructionExample>& dataset,
                   const MixupBatch& batch, const Tokenizer& tok, bool sum_reduction) {
  std::unordered_map<std::string, const InstructionExample*> by_id;
  for (const auto& ex : dataset) by_id[ex.id] = &ex;
  std::vector<InstructionExample> conf, unconf;
  std::vector<double> lambdas;
  for (const auto& pair : batch.pairs) {
    auto ci = by_id.find(pair.confident_id);
    auto ui = by_id.find(pair.unconfident_id);
    if (ci == by_id.end() || ui == by_id.end()) {
      throw DataError("mixup_loss: pair id not in dataset");
    }
    conf.push_back(*ci->second);
    unconf.push_back(*ui->second);
    lambdas.push_back(pair.lambda);
  }
  return mixup_loss(params, conf, unconf, lambdas, tok, sum_reduction);
}

ad::Var sftmix_loss(const ad::Var& ntp_loss, const ad::Var& mixup_loss, double mu) {
  if (!(mu >= 0.0)) throw ConfigError("sftmix_loss: mu must be >= 0");
  return ad::add(ntp_loss, ad::scale(mixup_loss, mu));
}

double sftmix_loss_value(double ntp_loss, double mixup_loss, double mu) {
  if (!(mu >= 0.0)) throw ConfigError("sftmix_loss: mu must be >= 0");
  return ntp_loss + mu * mixup_loss;
}

namespace {

// Plain H(y, softmax(z^T w)) used by the finite-difference probe.
double head_ce_value(const DenseArray& z, const DenseArray& y, const DenseArray& w) {
  const std::size_t d = z.size(), v = y.size();
  std::vector<double> s(v, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double zi = z[i];
    const double* wrow = w.data() + i * v;
    for (std::size_t j = 0; j < v; ++j) s[j] += zi * wrow[j];
  }
  const double lse = ad::log_sum_exp(s.data(), v);
  double h = 0.0;
  for (std::size_t j = 0; j < v; ++j) h += y[j] * (lse - s[j]);
  return h;
}

}  // namespace

HeadGradientReport head_gradient_check(const DenseArray& z, const DenseArray& y,
                                       const DenseArray& w) {
  if (z.rank() != 1 || y.rank() != 1 || w.rank() != 2) {
    throw ShapeError("head_gradient_check: expected z [d], y [V], w [d x V]");
  }
  const std::size_t d = z.size(), v = y.size();
  if (w.dim(0) != d || w.dim(1) != v) throw ShapeError("head_gradient_check: w shape mismatch");

  // Closed form: outer(z, softmax(z^T w) - y).
  std::vector<double> s(v, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < v; ++j) s[j] += z[i] * w.at2(i, j);
  }
  std::vector<double> p(v);
  ad::softmax_slice(s.data(), p.data(), v);
  HeadGradientReport report;
  report.closed_form = DenseArray({d, v});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < v; ++j) report.closed_form.at2(i, j) = z[i] * (p[j] - y[j]);
  }

  // Coordinates far below the gradient's own scale carry no relative
  // information at the oracle's noise floor; anchor the ratio there.
  double scale = 0.0;
  for (std::size_t i = 0; i < report.closed_form.size(); ++i) {
    scale = std::max(scale, std::abs(report.closed_form[i]));
  }
  const double floor = 1e-3 * scale + 1e-12;

  // Reverse-mode route.
  ad::Var w_leaf = ad::leaf(w);
  ad::Var z_row = ad::constant(DenseArray({1, d}, std::vector<double>(z.data(), z.data() + d)));
  ad::Var h = ad::cross_entropy_soft(y, ad::matmul(z_row, w_leaf));
  ad::backward(h);
  report.rel_err_autodiff = max_rel_err(report.closed_form, w_leaf.grad(), floor);

  // Finite-difference route.
  DenseArray fd = finite_diff_grad(
      [&](const DenseArray& wp) { return head_ce_value(z, y, wp); }, w, 1e-5);
  report.rel_err_finite_diff = max_rel_err(report.closed_form, fd, floor);
  return report;
}

double non_decomposition_witness(const DenseArray& zc, const DenseArray& zu, const DenseArray& w,
                                 double lambda) {
  if (zc.rank() != 1 || zu.rank() != 1 || w.rank() != 2) {
    throw ShapeError("non_decomposition_witness: expected zc,zu [d], w [d x V]");
  }
  const std::size_t d = zc.size(), v = w.dim(1);
  if (zu.size() != d || w.dim(0) != d) {
    throw ShapeError("non_decomposition_witness: dimension mismatch");
  }
  DenseArray z_mix({d});
  for (std::size_t i = 0; i < d; ++i) z_mix[i] = lambda * zc[i] + (1.0 - lambda) * zu[i];

  auto head_probs = [&](const DenseArray& z) {
    std::vector<double> s(v, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < v; ++j) s[j] += z[i] * w.at2(i, j);
    }
    std::vector<double> p(v);
    ad::softmax_slice(s.data(), p.data(), v);
    return p;
  };
  const std::vector<double> p_mix = head_probs(z_mix);
  const std::vector<double> p_c = head_probs(zc);
  const std::vector<double> p_u = head_probs(zu);
  double worst = 0.0;
  for (std::size_t j = 0; j < v; ++j) {
    worst = std::max(worst, std::abs(p_mix[j] - (lambda * p_c[j] + (1.0 - lambda) * p_u[j])));
  }
  return worst;
}

}  // namespace sftmix
