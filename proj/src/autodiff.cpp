#include "sftmix/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "sftmix/errors.hpp"

namespace sftmix::ad {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

NodePtr make_node(std::string op, DenseArray value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n->op = std::move(op);
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backward_fn = std::move(backward_fn);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  check_finite(n->value, n->op.c_str());
  return n;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": shape mismatch");
  }
}

// Accumulate src scaled into dst.grad_buffer().
void axpy(DenseArray& dst, const double* src, std::size_t n, double c = 1.0) {
  double* d = dst.data();
  for (std::size_t i = 0; i < n; ++i) d[i] += c * src[i];
}

}  // namespace

DenseArray& Node::grad_buffer() {
  if (grad.empty()) grad = DenseArray(value.shape());
  return grad;
}

const DenseArray& Var::value() const {
  if (!node_) throw ContractError("Var::value: undefined variable");
  return node_->value;
}

const DenseArray& Var::grad() const {
  if (!node_) throw ContractError("Var::grad: undefined variable");
  return node_->grad_buffer();
}

void Var::clear_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

DenseArray& Var::mutable_value() {
  if (!node_) throw ContractError("Var::mutable_value: undefined variable");
  return node_->value;
}

std::uint64_t Var::id() const { return node_ ? node_->id : 0; }

const std::string& Var::op() const {
  static const std::string empty;
  return node_ ? node_->op : empty;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

Var leaf(DenseArray value, bool requires_grad) {
  auto n = make_node("leaf", std::move(value), {}, nullptr);
  n->requires_grad = requires_grad;
  return Var(n);
}

Var constant(DenseArray value) {
  auto n = make_node("constant", std::move(value), {}, nullptr);
  n->requires_grad = false;
  return Var(n);
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  DenseArray out(a.value().shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  return Var(make_node("add", std::move(out), {a.node(), b.node()}, [n](Node& self) {
    const double* g = self.grad.data();
    if (self.parents[0]->requires_grad) axpy(self.parents[0]->grad_buffer(), g, n);
    if (self.parents[1]->requires_grad) axpy(self.parents[1]->grad_buffer(), g, n);
  }));
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  DenseArray out(a.value().shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
  return Var(make_node("sub", std::move(out), {a.node(), b.node()}, [n](Node& self) {
    const double* g = self.grad.data();
    if (self.parents[0]->requires_grad) axpy(self.parents[0]->grad_buffer(), g, n);
    if (self.parents[1]->requires_grad) axpy(self.parents[1]->grad_buffer(), g, n, -1.0);
  }));
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  DenseArray out(a.value().shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
  return Var(make_node("mul", std::move(out), {a.node(), b.node()}, [n](Node& self) {
    const double* g = self.grad.data();
    const double* av = self.parents[0]->value.data();
    const double* bv = self.parents[1]->value.data();
    if (self.parents[0]->requires_grad) {
      double* d = self.parents[0]->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * bv[i];
    }
    if (self.parents[1]->requires_grad) {
      double* d = self.parents[1]->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * av[i];
    }
  }));
}

Var scale(const Var& a, double s) {
  if (!std::isfinite(s)) throw InvalidInputError("scale: non-finite factor");
  DenseArray out(a.value().shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = s * a.value()[i];
  return Var(make_node("scale", std::move(out), {a.node()}, [n, s](Node& self) {
    if (self.parents[0]->requires_grad) {
      axpy(self.parents[0]->grad_buffer(), self.grad.data(), n, s);
    }
  }));
}

Var lincomb(const Var& a, const Var& b, double ca, double cb) {
  require_same_shape(a, b, "lincomb");
  DenseArray out(a.value().shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = ca * a.value()[i] + cb * b.value()[i];
  return Var(make_node("lincomb", std::move(out), {a.node(), b.node()}, [n, ca, cb](Node& self) {
    const double* g = self.grad.data();
    if (self.parents[0]->requires_grad) axpy(self.parents[0]->grad_buffer(), g, n, ca);
    if (self.parents[1]->requires_grad) axpy(self.parents[1]->grad_buffer(), g, n, cb);
  }));
}

Var mix_rows(const Var& a, const Var& b, const std::vector<double>& lam) {
  require_same_shape(a, b, "mix_rows");
  if (a.value().rank() != 2) throw ShapeError("mix_rows: rank-2 arrays required");
  const std::size_t rows = a.value().dim(0), cols = a.value().dim(1);
  if (lam.size() != rows) throw ShapeError("mix_rows: one coefficient per row required");
  DenseArray out(a.value().shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double la = lam[r];
    for (std::size_t c = 0; c < cols; ++c) {
      out.at2(r, c) = la * a.value().at2(r, c) + (1.0 - la) * b.value().at2(r, c);
    }
  }
  return Var(make_node("mix_rows", std::move(out), {a.node(), b.node()},
                       [rows, cols, lam](Node& self) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           const double la = lam[r];
                           const double* g = self.grad.data() + r * cols;
                           if (self.parents[0]->requires_grad) {
                             double* d = self.parents[0]->grad_buffer().data() + r * cols;
                             for (std::size_t c = 0; c < cols; ++c) d[c] += la * g[c];
                           }
                           if (self.parents[1]->requires_grad) {
                             double* d = self.parents[1]->grad_buffer().data() + r * cols;
                             for (std::size_t c = 0; c < cols; ++c) d[c] += (1.0 - la) * g[c];
                           }
                         }
                       }));
}

namespace {

// The gemm kernels parallelize over output rows; every output element keeps
// the same accumulation order as the serial loop, so results are bitwise
// identical for any thread count.

// C += A[m,k] * B[k,n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > 16384)
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA += dC[m,n] * B^T  (dA[i,kk] += dot(dC_i, B_kk))
void gemm_bt_acc(const double* dc, const double* b, double* da, std::size_t m, std::size_t k,
                 std::size_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > 16384)
  for (std::size_t i = 0; i < m; ++i) {
    const double* gcrow = dc + i * n;
    double* darow = da + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gcrow[j] * brow[j];
      darow[kk] += acc;
    }
  }
}

// dB += A^T * dC. Parallel over dB rows (kk); the i-accumulation order per
// element matches the serial i-outer loop.
void gemm_at_acc(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
                 std::size_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > 16384)
  for (std::size_t kk = 0; kk < k; ++kk) {
    double* dbrow = db + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i * k + kk];
      if (av == 0.0) continue;
      const double* gcrow = dc + i * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * gcrow[j];
    }
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2) {
    throw ShapeError("matmul: rank-2 arrays required");
  }
  const std::size_t m = a.value().dim(0), k = a.value().dim(1);
  if (b.value().dim(0) != k) throw ShapeError("matmul: inner dimensions disagree");
  const std::size_t n = b.value().dim(1);
  DenseArray out({m, n});
  gemm_acc(a.value().data(), b.value().data(), out.data(), m, k, n);
  return Var(make_node("matmul", std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (self.parents[0]->requires_grad) {
      gemm_bt_acc(g, self.parents[1]->value.data(), self.parents[0]->grad_buffer().data(), m, k,
                  n);
    }
    if (self.parents[1]->requires_grad) {
      gemm_at_acc(self.parents[0]->value.data(), g, self.parents[1]->grad_buffer().data(), m, k,
                  n);
    }
  }));
}

Var embedding_rows(const Var& table, const std::vector<int>& ids) {
  if (table.value().rank() != 2) throw ShapeError("embedding_rows: rank-2 table required");
  const std::size_t v = table.value().dim(0), d = table.value().dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw InvalidInputError("embedding_rows: id out of range");
    }
  }
  DenseArray out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const double* src = table.value().data() + static_cast<std::size_t>(ids[r]) * d;
    std::copy(src, src + d, out.data() + r * d);
  }
  return Var(make_node("embedding_rows", std::move(out), {table.node()}, [ids, d](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    double* tg = self.parents[0]->grad_buffer().data();
    const double* g = self.grad.data();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      double* dst = tg + static_cast<std::size_t>(ids[r]) * d;
      const double* src = g + r * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  }));
}

Var gather_rows(const Var& x, const std::vector<std::size_t>& rows) {
  if (x.value().rank() != 2) throw ShapeError("gather_rows: rank-2 array required");
  const std::size_t n = x.value().dim(0), d = x.value().dim(1);
  for (std::size_t r : rows) {
    if (r >= n) throw InvalidInputError("gather_rows: row index out of range");
  }
  DenseArray out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* src = x.value().data() + rows[r] * d;
    std::copy(src, src + d, out.data() + r * d);
  }
  return Var(make_node("gather_rows", std::move(out), {x.node()}, [rows, d](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    double* xg = self.parents[0]->grad_buffer().data();
    const double* g = self.grad.data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double* dst = xg + rows[r] * d;
      const double* src = g + r * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  }));
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  if (x.value().rank() != 2) throw ShapeError("layer_norm: rank-2 input required");
  const std::size_t rows = x.value().dim(0), d = x.value().dim(1);
  if (gain.value().size() != d || bias.value().size() != d) {
    throw ShapeError("layer_norm: gain/bias length must equal feature dim");
  }
  DenseArray out({rows, d});
  // xhat and inv_std are needed in the backward rule.
  auto xhat = std::make_shared<DenseArray>(DenseArray({rows, d}));
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* xv = x.value().data();
  const double* gv = gain.value().data();
  const double* bv = bias.value().data();
#pragma omp parallel for schedule(static) if (rows > 64)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double t = row[c] - mean;
      var += t * t;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    double* hrow = xhat->data() + r * d;
    double* orow = out.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      hrow[c] = (row[c] - mean) * is;
      orow[c] = gv[c] * hrow[c] + bv[c];
    }
  }
  return Var(make_node(
      "layer_norm", std::move(out), {x.node(), gain.node(), bias.node()},
      [rows, d, xhat, inv_std](Node& self) {
        const double* g = self.grad.data();
        const double* gv = self.parents[1]->value.data();
        const double dn = static_cast<double>(d);
        if (self.parents[1]->requires_grad || self.parents[2]->requires_grad) {
          double* dg = self.parents[1]->requires_grad ? self.parents[1]->grad_buffer().data()
                                                      : nullptr;
          double* db = self.parents[2]->requires_grad ? self.parents[2]->grad_buffer().data()
                                                      : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            const double* grow = g + r * d;
            const double* hrow = xhat->data() + r * d;
            for (std::size_t c = 0; c < d; ++c) {
              if (dg) dg[c] += grow[c] * hrow[c];
              if (db) db[c] += grow[c];
            }
          }
        }
        if (self.parents[0]->requires_grad) {
          double* dx = self.parents[0]->grad_buffer().data();
#pragma omp parallel for schedule(static) if (rows > 64)
          for (std::size_t r = 0; r < rows; ++r) {
            const double* grow = g + r * d;
            const double* hrow = xhat->data() + r * d;
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = grow[c] * gv[c];
              sum_dh += dh;
              sum_dh_h += dh * hrow[c];
            }
            const double is = (*inv_std)[r];
            double* dxrow = dx + r * d;
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = grow[c] * gv[c];
              dxrow[c] += is * (dh - sum_dh / dn - hrow[c] * sum_dh_h / dn);
            }
          }
        }
      }));
}

Var gelu(const Var& x) {
  const std::size_t n = x.value().size();
  DenseArray out(x.value().shape());
  const double* xv = x.value().data();
#pragma omp parallel for schedule(static) if (n > 4096)
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] / std::numbers::sqrt2));
  }
  return Var(make_node("gelu", std::move(out), {x.node()}, [n](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double* xv = self.parents[0]->value.data();
    const double* g = self.grad.data();
    double* dx = self.parents[0]->grad_buffer().data();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
#pragma omp parallel for schedule(static) if (n > 4096)
    for (std::size_t i = 0; i < n; ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(xv[i] / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
      dx[i] += g[i] * (cdf + xv[i] * pdf);
    }
  }));
}

void softmax_slice(const double* x, double* out, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - mx);
    total += out[i];
  }
  const double inv = 1.0 / total;
  for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
}

double log_sum_exp(const double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::exp(x[i] - mx);
  return mx + std::log(total);
}

Var softmax(const Var& logits) {
  check_finite(logits.value(), "softmax input");
  const std::size_t d = logits.value().shape().back();
  const std::size_t rows = logits.value().size() / d;
  DenseArray out(logits.value().shape());
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_slice(logits.value().data() + r * d, out.data() + r * d, d);
  }
  return Var(make_node("softmax", std::move(out), {logits.node()}, [rows, d](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double* p = self.value.data();
    const double* g = self.grad.data();
    double* dx = self.parents[0]->grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* pr = p + r * d;
      const double* gr = g + r * d;
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += pr[i] * gr[i];
      double* dr = dx + r * d;
      for (std::size_t i = 0; i < d; ++i) dr[i] += pr[i] * (gr[i] - dot);
    }
  }));
}

Var causal_attention(const Var& q, const Var& k, const Var& v, int n_heads,
                     const std::vector<int>& valid_len, int batch, int seq_len) {
  const std::size_t rows = static_cast<std::size_t>(batch) * seq_len;
  if (q.value().rank() != 2 || q.value().dim(0) != rows) {
    throw ShapeError("causal_attention: q must be [batch*seq_len x d]");
  }
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  const std::size_t d = q.value().dim(1);
  if (n_heads <= 0 || d % static_cast<std::size_t>(n_heads) != 0) {
    throw ShapeError("causal_attention: n_heads must divide feature dim");
  }
  if (valid_len.size() != static_cast<std::size_t>(batch)) {
    throw ShapeError("causal_attention: one valid length per batch row required");
  }
  const std::size_t hd = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t L = static_cast<std::size_t>(seq_len);

  // Attention probabilities saved for backward: [batch, head, i, j].
  auto probs = std::make_shared<DenseArray>(
      DenseArray({static_cast<std::size_t>(batch), static_cast<std::size_t>(n_heads), L, L}));
  DenseArray out({rows, d});

  const double* qv = q.value().data();
  const double* kv = k.value().data();
  const double* vv = v.value().data();
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    std::vector<double> scores(L);
    const std::size_t base = static_cast<std::size_t>(b) * L;
    const std::size_t vl = static_cast<std::size_t>(std::min<int>(valid_len[b], seq_len));
    for (int h = 0; h < n_heads; ++h) {
      const std::size_t off = static_cast<std::size_t>(h) * hd;
      double* pmat = probs->data() + ((static_cast<std::size_t>(b) * n_heads + h) * L) * L;
      for (std::size_t i = 0; i < L; ++i) {
        // Keys: j <= i, restricted to real (non-pad) positions. j = 0 is
        // always valid (BOS), so the slice is never empty.
        const std::size_t jmax = std::min(i + 1, std::max<std::size_t>(vl, 1));
        const double* qrow = qv + (base + i) * d + off;
        for (std::size_t j = 0; j < jmax; ++j) {
          const double* krow = kv + (base + j) * d + off;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += qrow[c] * krow[c];
          scores[j] = s * inv_scale;
        }
        double* prow = pmat + i * L;
        softmax_slice(scores.data(), prow, jmax);
        double* orow = out.data() + (base + i) * d + off;
        for (std::size_t j = 0; j < jmax; ++j) {
          const double p = prow[j];
          const double* vrow = vv + (base + j) * d + off;
          for (std::size_t c = 0; c < hd; ++c) orow[c] += p * vrow[c];
        }
      }
    }
  }

  auto vls = valid_len;
  return Var(make_node(
      "causal_attention", std::move(out), {q.node(), k.node(), v.node()},
      [probs, vls, batch, n_heads, hd, d, L, inv_scale](Node& self) {
        const bool need_q = self.parents[0]->requires_grad;
        const bool need_k = self.parents[1]->requires_grad;
        const bool need_v = self.parents[2]->requires_grad;
        if (!need_q && !need_k && !need_v) return;
        const double* g = self.grad.data();
        const double* qv = self.parents[0]->value.data();
        const double* kv = self.parents[1]->value.data();
        const double* vv = self.parents[2]->value.data();
        double* dq = need_q ? self.parents[0]->grad_buffer().data() : nullptr;
        double* dk = need_k ? self.parents[1]->grad_buffer().data() : nullptr;
        double* dv = need_v ? self.parents[2]->grad_buffer().data() : nullptr;
#pragma omp parallel for schedule(static)
        for (int b = 0; b < batch; ++b) {
          std::vector<double> dp(L), ds(L);
          const std::size_t base = static_cast<std::size_t>(b) * L;
          const std::size_t vl =
              static_cast<std::size_t>(std::min<int>(vls[b], static_cast<int>(L)));
          for (int h = 0; h < n_heads; ++h) {
            const std::size_t off = static_cast<std::size_t>(h) * hd;
            const double* pmat = probs->data() + ((static_cast<std::size_t>(b) * n_heads + h) * L) * L;
            for (std::size_t i = 0; i < L; ++i) {
              const std::size_t jmax = std::min(i + 1, std::max<std::size_t>(vl, 1));
              const double* prow = pmat + i * L;
              const double* grow = g + (base + i) * d + off;
              // dP and the softmax Jacobian contraction.
              double dot = 0.0;
              for (std::size_t j = 0; j < jmax; ++j) {
                const double* vrow = vv + (base + j) * d + off;
                double acc = 0.0;
                for (std::size_t c = 0; c < hd; ++c) acc += grow[c] * vrow[c];
                dp[j] = acc;
                dot += prow[j] * acc;
              }
              for (std::size_t j = 0; j < jmax; ++j) ds[j] = prow[j] * (dp[j] - dot) * inv_scale;
              if (need_v) {
                for (std::size_t j = 0; j < jmax; ++j) {
                  double* dvrow = dv + (base + j) * d + off;
                  const double p = prow[j];
                  for (std::size_t c = 0; c < hd; ++c) dvrow[c] += p * grow[c];
                }
              }
              if (need_q) {
                double* dqrow = dq + (base + i) * d + off;
                for (std::size_t j = 0; j < jmax; ++j) {
                  const double* krow = kv + (base + j) * d + off;
                  const double s = ds[j];
                  for (std::size_t c = 0; c < hd; ++c) dqrow[c] += s * krow[c];
                }
              }
              if (need_k) {
                const double* qrow = qv + (base + i) * d + off;
                for (std::size_t j = 0; j < jmax; ++j) {
                  double* dkrow = dk + (base + j) * d + off;
                  const double s = ds[j];
                  for (std::size_t c = 0; c < hd; ++c) dkrow[c] += s * qrow[c];
                }
              }
            }
          }
        }
      }));
}

namespace {

void validate_soft_target(const DenseArray& target, std::size_t want_len) {
  if (target.size() != want_len) throw ShapeError("cross_entropy_soft: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double t = target[i];
    if (!(t >= 0.0)) throw InvalidInputError("cross_entropy_soft: negative target entry");
    total += t;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InvalidInputError("cross_entropy_soft: target must sum to 1");
  }
}

}  // namespace

Var cross_entropy_soft(const DenseArray& target, const Var& logits) {
  check_finite(logits.value(), "cross_entropy_soft input");
  const std::size_t n = logits.value().size();
  validate_soft_target(target, n);
  const double* x = logits.value().data();
  const double lse = log_sum_exp(x, n);
  double h = 0.0;
  for (std::size_t i = 0; i < n; ++i) h += target[i] * (lse - x[i]);
  DenseArray t = target;
  return Var(make_node("cross_entropy_soft", DenseArray::scalar(h), {logits.node()},
                       [t = std::move(t), n](Node& self) {
                         if (!self.parents[0]->requires_grad) return;
                         const double g = self.grad[0];
                         const double* x = self.parents[0]->value.data();
                         double* dx = self.parents[0]->grad_buffer().data();
                         std::vector<double> p(n);
                         softmax_slice(x, p.data(), n);
                         for (std::size_t i = 0; i < n; ++i) dx[i] += g * (p[i] - t[i]);
                       }));
}

Var nll_rows(const Var& logits, const std::vector<int>& tok,
             const std::vector<double>& row_weight, double divisor) {
  if (logits.value().rank() != 2) throw ShapeError("nll_rows: rank-2 logits required");
  const std::size_t rows = logits.value().dim(0), v = logits.value().dim(1);
  if (tok.size() != rows || row_weight.size() != rows) {
    throw ShapeError("nll_rows: one target and weight per row required");
  }
  if (!(divisor > 0.0)) throw InvalidInputError("nll_rows: divisor must be positive");
  for (std::size_t r = 0; r < rows; ++r) {
    if (row_weight[r] == 0.0) continue;
    if (tok[r] < 0 || static_cast<std::size_t>(tok[r]) >= v) {
      throw InvalidInputError("nll_rows: target token out of range");
    }
  }
  const double* x = logits.value().data();
  // Per-row terms in parallel, reduced in row order.
  std::vector<double> terms(rows, 0.0);
#pragma omp parallel for schedule(static) if (rows > 64)
  for (std::size_t r = 0; r < rows; ++r) {
    if (row_weight[r] == 0.0) continue;
    const double* row = x + r * v;
    terms[r] = row_weight[r] * (log_sum_exp(row, v) - row[tok[r]]);
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) loss += terms[r];
  loss /= divisor;
  return Var(make_node("nll_rows", DenseArray::scalar(loss), {logits.node()},
                       [tok, row_weight, divisor, rows, v](Node& self) {
                         if (!self.parents[0]->requires_grad) return;
                         const double g = self.grad[0] / divisor;
                         const double* x = self.parents[0]->value.data();
                         double* dx = self.parents[0]->grad_buffer().data();
#pragma omp parallel for schedule(static) if (rows > 64)
                         for (std::size_t r = 0; r < rows; ++r) {
                           if (row_weight[r] == 0.0) continue;
                           std::vector<double> p(v);
                           const double w = g * row_weight[r];
                           const double* row = x + r * v;
                           double* drow = dx + r * v;
                           softmax_slice(row, p.data(), v);
                           for (std::size_t i = 0; i < v; ++i) drow[i] += w * p[i];
                           drow[tok[r]] -= w;
                         }
                       }));
}

Var soft_pair_nll_rows(const Var& logits, const std::vector<int>& tok_a,
                       const std::vector<int>& tok_b, const std::vector<double>& lam,
                       double divisor) {
  if (logits.value().rank() != 2) throw ShapeError("soft_pair_nll_rows: rank-2 logits required");
  const std::size_t rows = logits.value().dim(0), v = logits.value().dim(1);
  if (tok_a.size() != rows || tok_b.size() != rows || lam.size() != rows) {
    throw ShapeError("soft_pair_nll_rows: per-row targets and lambda required");
  }
  if (!(divisor > 0.0)) throw InvalidInputError("soft_pair_nll_rows: divisor must be positive");
  const double* x = logits.value().data();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int a = tok_a[r], b = tok_b[r];
    if (a < 0 || static_cast<std::size_t>(a) >= v || b < 0 || static_cast<std::size_t>(b) >= v) {
      throw InvalidInputError("soft_pair_nll_rows: target token out of range");
    }
    const double la = lam[r];
    if (!(la >= 0.0 && la <= 1.0)) {
      throw InvalidInputError("soft_pair_nll_rows: lambda outside [0,1]");
    }
    const double* row = x + r * v;
    const double lse = log_sum_exp(row, v);
    loss += la * (lse - row[a]) + (1.0 - la) * (lse - row[b]);
  }
  loss /= divisor;
  return Var(make_node("soft_pair_nll", DenseArray::scalar(loss), {logits.node()},
                       [tok_a, tok_b, lam, divisor, rows, v](Node& self) {
                         if (!self.parents[0]->requires_grad) return;
                         const double g = self.grad[0] / divisor;
                         const double* x = self.parents[0]->value.data();
                         double* dx = self.parents[0]->grad_buffer().data();
                         std::vector<double> p(v);
                         for (std::size_t r = 0; r < rows; ++r) {
                           const double* row = x + r * v;
                           double* drow = dx + r * v;
                           softmax_slice(row, p.data(), v);
                           for (std::size_t i = 0; i < v; ++i) drow[i] += g * p[i];
                           drow[tok_a[r]] -= g * lam[r];
                           drow[tok_b[r]] -= g * (1.0 - lam[r]);
                         }
                       }));
}

Var sum(const Var& a) {
  double total = 0.0;
  const std::size_t n = a.value().size();
  for (std::size_t i = 0; i < n; ++i) total += a.value()[i];
  return Var(make_node("sum", DenseArray::scalar(total), {a.node()}, [n](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    double* d = self.parents[0]->grad_buffer().data();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < n; ++i) d[i] += g;
  }));
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

void backward(const Var& root) {
  if (!root.defined()) throw ContractError("backward: undefined root");
  if (root.value().size() != 1) throw ContractError("backward: root must be a scalar");
  if (!root.requires_grad()) return;  // nothing reachable needs gradients

  // Reachable subgraph, then reverse-creation order (a topological order,
  // since parents always predate children).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

  root.node()->grad_buffer()[0] += 1.0;
  for (Node* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace sftmix::ad
