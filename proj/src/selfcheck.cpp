#include "sftmix/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "sftmix/autodiff.hpp"
#include "sftmix/corpus.hpp"
#include "sftmix/errors.hpp"
#include "sftmix/finite_diff.hpp"
#include "sftmix/mixup.hpp"
#include "sftmix/model.hpp"
#include "sftmix/rng.hpp"

namespace sftmix {

namespace {

DenseArray random_array(std::vector<std::size_t> shape, SeededRng& rng, double scale = 1.0) {
  DenseArray a(std::move(shape));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = scale * rng.normal();
  return a;
}

DenseArray random_simplex(std::size_t n, SeededRng& rng) {
  DenseArray t({n});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = rng.uniform_pos();
    total += t[i];
  }
  for (std::size_t i = 0; i < n; ++i) t[i] /= total;
  return t;
}

struct Failure {
  std::ostringstream os;
  bool any = false;
  template <typename T>
  void operator()(bool ok, const T& msg) {
    if (!ok) {
      if (any) os << "; ";
      os << msg;
      any = true;
    }
  }
};

CheckResult make_result(const std::string& name, Failure& f) {
  return {name, !f.any, f.any ? f.os.str() : "ok"};
}

CheckResult check_softmax(SeededRng& rng) {
  Failure fail;
  {
    ad::Var p = ad::softmax(ad::constant(DenseArray({2}, {0.0, 0.0})));
    fail(std::abs(p.value()[0] - 0.5) < 1e-15 && std::abs(p.value()[1] - 0.5) < 1e-15,
         "softmax([0,0]) != [0.5,0.5]");
  }
  {
    ad::Var p = ad::softmax(ad::constant(DenseArray({3}, {1000.0, 1000.0, 1000.0})));
    for (int i = 0; i < 3; ++i) {
      fail(std::abs(p.value()[i] - 1.0 / 3.0) < 1e-12, "softmax shift invariance broken");
    }
  }
  {
    // e^2/(e^2+1) evaluated directly.
    ad::Var p = ad::softmax(ad::constant(DenseArray({2}, {2.0, 0.0})));
    fail(std::abs(p.value()[0] - 0.880797) < 1e-5, "softmax([2,0])[0] != 0.880797");
    fail(std::abs(p.value()[1] - 0.119203) < 1e-5, "softmax([2,0])[1] != 0.119203");
  }
  for (int trial = 0; trial < 20; ++trial) {
    DenseArray x = random_array({4, 7}, rng, 3.0);
    ad::Var p = ad::softmax(ad::constant(x));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) total += p.value().at2(r, c);
      fail(std::abs(total - 1.0) <= 1e-12, "softmax row does not sum to 1 within 1e-12");
      for (std::size_t a = 0; a < 7; ++a) {
        for (std::size_t b = 0; b < 7; ++b) {
          if (x.at2(r, a) < x.at2(r, b)) {
            fail(p.value().at2(r, a) <= p.value().at2(r, b), "softmax not monotone");
          }
        }
      }
    }
  }
  {
    bool threw = false;
    try {
      DenseArray bad({2});
      bad[0] = std::numeric_limits<double>::infinity();
      ad::softmax(ad::constant(bad));
    } catch (const InvalidInputError&) {
      threw = true;
    } catch (...) {
    }
    fail(threw, "softmax accepted non-finite input");
  }
  return make_result("softmax contracts", fail);
}

CheckResult check_cross_entropy(SeededRng& rng) {
  Failure fail;
  const double ln2 = std::log(2.0);
  {
    ad::Var h = ad::cross_entropy_soft(DenseArray({2}, {0.5, 0.5}),
                                       ad::constant(DenseArray({2}, {0.0, 0.0})));
    fail(std::abs(h.value()[0] - ln2) < 1e-12, "H(uniform, uniform logits) != ln 2");
  }
  {
    ad::Var h = ad::cross_entropy_soft(DenseArray({2}, {1.0, 0.0}),
                                       ad::constant(DenseArray({2}, {0.0, 0.0})));
    fail(std::abs(h.value()[0] - ln2) < 1e-12, "one-hot NLL of uniform predictor != ln 2");
  }
  {
    // Composition with the softmax([2,0]) example: 0.5*(-ln .880797) + 0.5*(-ln .119203).
    ad::Var h = ad::cross_entropy_soft(DenseArray({2}, {0.5, 0.5}),
                                       ad::constant(DenseArray({2}, {2.0, 0.0})));
    fail(std::abs(h.value()[0] - 1.12693) < 1e-4, "composed cross-entropy != 1.12693");
  }
  // Gibbs: H(t, s) >= entropy(t), equality iff softmax(s) = t.
  for (int trial = 0; trial < 50; ++trial) {
    DenseArray t = random_simplex(5, rng);
    DenseArray s = random_array({5}, rng, 2.0);
    double entropy = 0.0;
    for (std::size_t i = 0; i < 5; ++i) entropy -= t[i] * std::log(t[i]);
    const double h = ad::cross_entropy_soft(t, ad::constant(s)).value()[0];
    fail(h >= entropy - 1e-12, "Gibbs inequality violated");
    // Equality case: logits = log t (softmax recovers t exactly up to rounding).
    DenseArray log_t({5});
    for (std::size_t i = 0; i < 5; ++i) log_t[i] = std::log(t[i]);
    const double h_eq = ad::cross_entropy_soft(t, ad::constant(log_t)).value()[0];
    fail(std::abs(h_eq - entropy) < 1e-9, "Gibbs equality case violated");
  }
  return make_result("soft cross-entropy contracts", fail);
}

// Random compositions of the supported primitives, checked against central
// differences leaf by leaf.
CheckResult check_grad_compositions(SeededRng& rng) {
  Failure fail;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t r = 2, c = 3, k = 4;
    std::vector<int> plan;
    const int n_ops = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < n_ops; ++i) plan.push_back(static_cast<int>(rng.below(7)));
    const bool with_matmul = rng.below(2) == 0;
    const bool ce_reduce = rng.below(2) == 0;
    std::vector<double> lam(r);
    for (auto& l : lam) l = rng.uniform();
    DenseArray target = random_simplex(with_matmul ? r * k : r * c, rng);

    // Leaf values; index 0..4 = A, B, C, gain, bias.
    std::vector<DenseArray> leaf_values{random_array({r, c}, rng, 0.8),
                                        random_array({r, c}, rng, 0.8),
                                        random_array({c, k}, rng, 0.8),
                                        random_array({c}, rng, 0.3),
                                        random_array({c}, rng, 0.3)};
    leaf_values[3].fill(1.0);  // gain near 1 keeps layer_norm well-conditioned
    for (std::size_t i = 0; i < c; ++i) leaf_values[3][i] += 0.2 * rng.normal();

    auto eval = [&](const std::vector<DenseArray>& vals,
                    std::vector<ad::Var>* leaves_out) -> ad::Var {
      std::vector<ad::Var> leaves;
      for (const auto& v : vals) leaves.push_back(ad::leaf(v));
      if (leaves_out) *leaves_out = leaves;
      ad::Var v = leaves[0];
      for (int op : plan) {
        switch (op) {
          case 0: v = ad::add(v, leaves[1]); break;
          case 1: v = ad::sub(v, leaves[1]); break;
          case 2: v = ad::mul(v, leaves[1]); break;
          case 3: v = ad::gelu(v); break;
          case 4: v = ad::layer_norm(v, leaves[3], leaves[4]); break;
          case 5: v = ad::scale(v, 1.7); break;
          case 6: v = ad::mix_rows(v, leaves[1], lam); break;
        }
      }
      if (with_matmul) v = ad::matmul(v, leaves[2]);
      if (ce_reduce) return ad::cross_entropy_soft(target, v);
      return ad::mean(ad::gelu(v));
    };

    std::vector<ad::Var> leaves;
    ad::Var root = eval(leaf_values, &leaves);
    ad::backward(root);
    for (std::size_t li = 0; li < leaf_values.size(); ++li) {
      DenseArray fd = finite_diff_grad(
          [&](const DenseArray& x) {
            std::vector<DenseArray> probe = leaf_values;
            probe[li] = x;
            return eval(probe, nullptr).value()[0];
          },
          leaf_values[li], 1e-5);
      worst = std::max(worst, max_rel_err(leaves[li].grad(), fd));
    }
  }
  fail(worst < 1e-5, "backward vs finite differences: max relative error " + std::to_string(worst));
  return {"backward vs finite differences (100 compositions)", !fail.any,
          fail.any ? fail.os.str() : "max rel err " + std::to_string(worst)};
}

CheckResult check_beta_sampler(SeededRng& /*rng*/) {
  Failure fail;
  const int n = 100000;
  {
    SeededRng r1(12345);
    double total = 0.0, total_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = sample_beta(0.5, r1);
      fail(x >= 0.0 && x <= 1.0, "beta draw outside [0,1]");
      total += x;
      total_sq += x * x;
    }
    const double mean = total / n;
    const double var = total_sq / n - mean * mean;
    fail(std::abs(mean - 0.5) < 0.01, "Beta(0.5,0.5) mean " + std::to_string(mean));
    fail(std::abs(var - 0.125) < 0.005, "Beta(0.5,0.5) variance " + std::to_string(var));
  }
  {
    // Beta(1,1) = Uniform; Kolmogorov-Smirnov against U(0,1).
    SeededRng r2(777);
    std::vector<double> xs(n);
    for (auto& x : xs) x = sample_beta(1.0, r2);
    std::sort(xs.begin(), xs.end());
    double d = 0.0;
    for (int i = 0; i < n; ++i) {
      d = std::max(d, std::max(xs[i] - static_cast<double>(i) / n,
                               static_cast<double>(i + 1) / n - xs[i]));
    }
    fail(d < 0.01, "KS statistic " + std::to_string(d));
  }
  {
    SeededRng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
      fail(sample_beta(0.5, a) == sample_beta(0.5, b), "identical seeds diverged");
    }
  }
  {
    bool threw = false;
    SeededRng r3(1);
    try {
      sample_beta(0.0, r3);
    } catch (const InvalidInputError&) {
      threw = true;
    }
    fail(threw, "sample_beta accepted alpha = 0");
  }
  return make_result("Beta sampler moments and determinism", fail);
}

CheckResult check_head_gradient(SeededRng& rng) {
  Failure fail;
  double worst_ad = 0.0, worst_fd = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    DenseArray z = random_array({3}, rng);
    DenseArray w = random_array({3, 4}, rng);
    // Interpolated two-hot label.
    DenseArray y({4});
    const double lam = rng.uniform();
    y[rng.below(4)] += lam;
    y[rng.below(4)] += 1.0 - lam;
    HeadGradientReport report = head_gradient_check(z, y, w);
    worst_ad = std::max(worst_ad, report.rel_err_autodiff);
    worst_fd = std::max(worst_fd, report.rel_err_finite_diff);
  }
  fail(worst_ad < 1e-10, "closed form vs autodiff rel err " + std::to_string(worst_ad));
  fail(worst_fd < 1e-5, "closed form vs finite differences rel err " + std::to_string(worst_fd));
  {
    // Stationarity: sigma(z^T w) == y gives a zero gradient.
    DenseArray z({2}, {0.3, -0.7});
    DenseArray w({2, 3});  // zero weights -> uniform probabilities
    DenseArray y = DenseArray::full({3}, 1.0 / 3.0);
    HeadGradientReport report = head_gradient_check(z, y, w);
    double mx = 0.0;
    for (std::size_t i = 0; i < report.closed_form.size(); ++i) {
      mx = std::max(mx, std::abs(report.closed_form[i]));
    }
    fail(mx < 1e-15, "gradient not zero at the stationary point");
  }
  return make_result("closed-form head gradient vs autodiff and finite differences", fail);
}

CheckResult check_non_decomposition(SeededRng& rng) {
  Failure fail;
  {
    // Worked instance: zc=[2,0], zu=[0,1], W=I, lambda=0.5.
    DenseArray zc({2}, {2.0, 0.0}), zu({2}, {0.0, 1.0});
    DenseArray w({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const double d = non_decomposition_witness(zc, zu, w, 0.5);
    fail(std::abs(d - 0.0476) < 1e-3, "worked instance discrepancy " + std::to_string(d));
  }
  int over_threshold = 0;
  for (int trial = 0; trial < 100; ++trial) {
    DenseArray zc = random_array({4}, rng);
    DenseArray zu = random_array({4}, rng);
    DenseArray w = random_array({4, 5}, rng);
    if (non_decomposition_witness(zc, zu, w, 0.5) > 1e-3) ++over_threshold;
    fail(non_decomposition_witness(zc, zu, w, 0.0) < 1e-12, "lambda=0 endpoint nonzero");
    fail(non_decomposition_witness(zc, zu, w, 1.0) < 1e-12, "lambda=1 endpoint nonzero");
    fail(non_decomposition_witness(zc, zc, w, 0.5) < 1e-12, "degenerate zc=zu nonzero");
  }
  fail(over_threshold >= 99, "only " + std::to_string(over_threshold) +
                                 "/100 random instances exceeded 1e-3");
  return make_result("softmax non-decomposition witness", fail);
}

// lambda=1 (resp. 0) must reproduce the truncated confident (unconfident)
// token-mean NTP loss, computed here by direct evaluation.
CheckResult check_endpoint_reduction(SeededRng& /*rng*/) {
  Failure fail;
  CorpusSpec spec;
  spec.num_examples = 8;
  spec.min_payload = 2;
  spec.max_payload = 6;
  spec.seed = 99;
  const auto examples = generate_corpus(spec);
  const Tokenizer tok(26);
  ModelConfig mc;
  mc.vocab_size = 32;
  mc.d_model = 16;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.max_seq_len = 32;
  mc.init_seed = 5;
  const Parameters params = init_parameters(mc);

  const std::vector<InstructionExample> conf(examples.begin(), examples.begin() + 4);
  const std::vector<InstructionExample> unconf(examples.begin() + 4, examples.end());

  auto truncated_reference = [&](const std::vector<InstructionExample>& side) {
    // Forward the same combined batch, then average -log softmax over each
    // pair's first N' response predictions on the chosen side.
    std::vector<InstructionExample> combined = conf;
    combined.insert(combined.end(), unconf.begin(), unconf.end());
    TokenizedBatch batch = collate(combined, tok, mc.max_seq_len);
    ForwardOutput fwd = forward(params, batch.tokens, batch.valid_len, batch.batch, batch.seq_len);
    const DenseArray& logits = fwd.logits.value();
    const std::size_t v = logits.dim(1);
    double total = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < conf.size(); ++i) {
      const int rc = static_cast<int>(i), ru = static_cast<int>(conf.size() + i);
      const int trunc = std::min(batch.resp_len[rc], batch.resp_len[ru]);
      const int row = (&side == &conf) ? rc : ru;
      const int start = batch.response_start(row);
      for (int k = 0; k < trunc; ++k) {
        const std::size_t pos = static_cast<std::size_t>(row) * batch.seq_len + start + k;
        const double* lrow = logits.data() + (pos - 1) * v;
        total += ad::log_sum_exp(lrow, v) - lrow[batch.tokens[pos]];
        ++count;
      }
    }
    return total / static_cast<double>(count);
  };

  const std::vector<double> ones(conf.size(), 1.0), zeros(conf.size(), 0.0);
  const double at_one = mixup_loss(params, conf, unconf, ones, tok).value()[0];
  const double at_zero = mixup_loss(params, conf, unconf, zeros, tok).value()[0];
  const double ref_conf = truncated_reference(conf);
  const double ref_unconf = truncated_reference(unconf);
  fail(std::abs(at_one - ref_conf) < 1e-10,
       "lambda=1 mismatch: " + std::to_string(at_one) + " vs " + std::to_string(ref_conf));
  fail(std::abs(at_zero - ref_unconf) < 1e-10,
       "lambda=0 mismatch: " + std::to_string(at_zero) + " vs " + std::to_string(ref_unconf));
  return make_result("mixup endpoint reduction", fail);
}

CheckResult check_interpolation(SeededRng& rng) {
  Failure fail;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t nc = 2 + rng.below(4), nu = 2 + rng.below(4), d = 5;
    const int v = 11;
    DenseArray zc = random_array({nc, d}, rng);
    DenseArray zu = random_array({nu, d}, rng);
    std::vector<int> yc(nc), yu(nu);
    for (auto& t : yc) t = static_cast<int>(rng.below(v));
    for (auto& t : yu) t = static_cast<int>(rng.below(v));
    const double lam = rng.uniform();

    InterpolatedTargets mix = interpolate(zc, zu, yc, yu, lam, v);
    const std::size_t n = std::min(nc, nu);
    fail(mix.z.dim(0) == n && mix.y.dim(0) == n, "truncation length wrong");
    for (std::size_t r = 0; r < n; ++r) {
      double total = 0.0;
      int nonzero = 0;
      for (int j = 0; j < v; ++j) {
        total += mix.y.at2(r, j);
        if (mix.y.at2(r, j) != 0.0) ++nonzero;
      }
      fail(std::abs(total - 1.0) <= 1e-12, "soft label row does not sum to 1");
      fail(nonzero <= 2, "soft label row has more than two nonzero entries");
    }
    // Label symmetry: swapping roles and lambda -> 1-lambda is a no-op.
    InterpolatedTargets swapped = interpolate(zu, zc, yu, yc, 1.0 - lam, v);
    for (std::size_t i = 0; i < mix.y.size(); ++i) {
      fail(std::abs(mix.y[i] - swapped.y[i]) <= 1e-12, "label symmetry broken");
    }
  }
  return make_result("interpolation invariants", fail);
}

}  // namespace

std::vector<CheckResult> run_selfchecks(std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<CheckResult> results;
  results.push_back(check_softmax(rng));
  results.push_back(check_cross_entropy(rng));
  results.push_back(check_grad_compositions(rng));
  results.push_back(check_beta_sampler(rng));
  results.push_back(check_head_gradient(rng));
  results.push_back(check_non_decomposition(rng));
  results.push_back(check_endpoint_reduction(rng));
  results.push_back(check_interpolation(rng));
  return results;
}

}  // namespace sftmix
