#include "uap/ndgrad.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>

#include "uap/error.hpp"

namespace uap::nd {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Array::Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (numel(shape) != data.size()) {
    throw DimensionError("array of shape " + to_string(shape) + " given " +
                         std::to_string(data.size()) + " values");
  }
}

Array Array::zeros(Shape s) { return filled(std::move(s), 0.0); }

Array Array::filled(Shape s, double v) {
  const std::size_t n = numel(s);
  return Array(std::move(s), std::vector<double>(n, v));
}

// ---------------------------------------------------------------------------
// Kernels

namespace blas {

void gemm(std::size_t p, std::size_t q, std::size_t r, const double* a, const double* b,
          double* c) {
  for (std::size_t i = 0; i < p; ++i) {
    double* crow = c + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      const double* brow = b + k * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
}

void gemm_bt(std::size_t p, std::size_t q, std::size_t r, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* arow = a + i * r;
    double* crow = c + i * q;
    for (std::size_t k = 0; k < q; ++k) crow[k] += dot(arow, b + k * r, r);
  }
}

void gemm_at(std::size_t p, std::size_t q, std::size_t r, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < p; ++i) {
    const double* brow = b + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      double* crow = c + k * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  // Eight independent partial sums; fixed order, so results are reproducible.
  double acc[8] = {};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[j + l] * b[j + l];
  }
  for (; j < n; ++j) acc[0] += a[j] * b[j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

double sigmoid(double v) {
  // Branches keep exp() from overflowing for large |v|.
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

namespace {

inline double exp_kernel(double x) {
  x = x < -700.0 ? -700.0 : x;
  x = x > 700.0 ? 700.0 : x;
  // x = k ln2 + r, |r| <= ln2 / 2, with ln2 split for exact reduction.
  constexpr double kLog2e = 1.4426950408889634;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kRound = 6755399441055744.0;  // 1.5 * 2^52, rounds to nearest
  const double k = (x * kLog2e + kRound) - kRound;
  const double r = (x - k * kLn2Hi) - k * kLn2Lo;
  // Taylor series to degree 13; truncation error < 1e-17 on the reduced range.
  double p = 1.0 / 6227020800.0;
  p = p * r + 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  // Scale by 2^k through the exponent bits.
  const std::int64_t bits = (static_cast<std::int64_t>(k) + 1023) << 52;
  double scale;
  std::memcpy(&scale, &bits, sizeof scale);
  return p * scale;
}

}  // namespace

void vexp(const double* in, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = exp_kernel(in[i]);
}

void vsigmoid(double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 / (1.0 + exp_kernel(-v[i]));
}

void vtanh(double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double e = exp_kernel(-2.0 * std::abs(v[i]));
    v[i] = std::copysign((1.0 - e) / (1.0 + e), v[i]);
  }
}

}  // namespace blas

// ---------------------------------------------------------------------------
// Tensor

const Shape& Tensor::shape() const { return tape_->node(*this).value.shape; }

std::span<const double> Tensor::data() const { return tape_->node(*this).value.data; }

bool Tensor::requires_grad() const { return tape_->node(*this).requires_grad; }

bool Tensor::has_grad() const { return !tape_->node(*this).grad.empty(); }

std::span<const double> Tensor::grad() const { return tape_->node(*this).grad; }

double Tensor::item() const {
  const auto d = data();
  if (d.size() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
  return d[0];
}

Array Tensor::value() const { return tape_->node(*this).value; }

// ---------------------------------------------------------------------------
// Tape plumbing

const Tape::Node& Tape::node(Tensor t) const { return nodes_[t.id_]; }
Tape::Node& Tape::node(Tensor t) { return nodes_[t.id_]; }

void Tape::check_owned(Tensor t, const char* op) const {
  if (t.tape_ != this || t.id_ >= nodes_.size()) {
    throw UsageError(std::string(op) + ": tensor does not belong to this tape");
  }
}

Tensor Tape::leaf(Array value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::record(Array value, std::span<const Tensor> inputs, BackwardFn backward) {
  bool rg = false;
  for (const Tensor& in : inputs) {
    check_owned(in, "record");
    rg = rg || node(in).requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(backward) : BackwardFn{}});
  return Tensor(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_buffer(Tensor t) {
  Node& n = node(t);
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(n.value.data.size(), 0.0);
  return n.grad;
}

void Tape::backward(Tensor loss) {
  check_owned(loss, "backward");
  if (backward_done_) throw UsageError("backward: gradients already populated on this tape");
  Node& root = node(loss);
  if (root.value.data.size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " + to_string(root.value.shape));
  }
  if (!root.requires_grad) throw UsageError("backward: loss is detached from any gradient input");
  backward_done_ = true;
  root.grad.assign(1, 1.0);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + to_string(a.shape()));
  }
}

}  // namespace

Tensor Tape::matmul(Tensor a, Tensor b) {
  check_owned(a, "matmul");
  check_owned(b, "matmul");
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t p = a.shape()[0], q = a.shape()[1], r = b.shape()[1];
  if (b.shape()[0] != q) {
    throw DimensionError("matmul: inner dimensions disagree " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Array out = Array::zeros({p, r});
  blas::gemm(p, q, r, a.data().data(), b.data().data(), out.data.data());
  const Tensor in[] = {a, b};
  return record(std::move(out), in, [a, b, p, q, r](Tape& t, std::span<const double> dC) {
    if (auto dA = t.grad_buffer(a); !dA.empty()) {
      blas::gemm_bt(p, q, r, dC.data(), t.node(b).value.data.data(), dA.data());
    }
    if (auto dB = t.grad_buffer(b); !dB.empty()) {
      blas::gemm_at(p, q, r, t.node(a).value.data.data(), dC.data(), dB.data());
    }
  });
}

Tensor Tape::add(Tensor a, Tensor b) {
  check_owned(a, "add");
  check_owned(b, "add");
  require_same_shape(a, b, "add");
  Array out = a.value();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bd[i];
  const Tensor in[] = {a, b};
  return record(std::move(out), in, [a, b](Tape& t, std::span<const double> g) {
    for (Tensor x : {a, b}) {
      if (auto dx = t.grad_buffer(x); !dx.empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      }
    }
  });
}

Tensor Tape::sub(Tensor a, Tensor b) {
  check_owned(a, "sub");
  check_owned(b, "sub");
  require_same_shape(a, b, "sub");
  Array out = a.value();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bd[i];
  const Tensor in[] = {a, b};
  return record(std::move(out), in, [a, b](Tape& t, std::span<const double> g) {
    if (auto da = t.grad_buffer(a); !da.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (auto db = t.grad_buffer(b); !db.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
}

Tensor Tape::mul(Tensor a, Tensor b) {
  check_owned(a, "mul");
  check_owned(b, "mul");
  require_same_shape(a, b, "mul");
  Array out = a.value();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bd[i];
  const Tensor in[] = {a, b};
  return record(std::move(out), in, [a, b](Tape& t, std::span<const double> g) {
    const auto& av = t.node(a).value.data;
    const auto& bv = t.node(b).value.data;
    if (auto da = t.grad_buffer(a); !da.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (auto db = t.grad_buffer(b); !db.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

Tensor Tape::sigmoid(Tensor a) {
  check_owned(a, "sigmoid");
  Array out = a.value();
  for (double& v : out.data) v = blas::sigmoid(v);
  const Tensor in[] = {a};
  const std::size_t self = nodes_.size();
  return record(std::move(out), in, [a, self](Tape& t, std::span<const double> g) {
    auto da = t.grad_buffer(a);
    const auto& s = t.nodes_[self].value.data;
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

Tensor Tape::tanh(Tensor a) {
  check_owned(a, "tanh");
  Array out = a.value();
  for (double& v : out.data) v = std::tanh(v);
  const Tensor in[] = {a};
  const std::size_t self = nodes_.size();
  return record(std::move(out), in, [a, self](Tape& t, std::span<const double> g) {
    auto da = t.grad_buffer(a);
    const auto& y = t.nodes_[self].value.data;
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor Tape::add_row_bias(Tensor a, Tensor bias) {
  check_owned(a, "add_row_bias");
  check_owned(bias, "add_row_bias");
  require_rank(a, 2, "add_row_bias");
  const std::size_t p = a.shape()[0], q = a.shape()[1];
  if (bias.size() != q || bias.shape().size() != 1) {
    throw DimensionError("add_row_bias: bias " + to_string(bias.shape()) + " does not match rows of " +
                         to_string(a.shape()));
  }
  Array out = a.value();
  const auto bd = bias.data();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) out.data[i * q + j] += bd[j];
  }
  const Tensor in[] = {a, bias};
  return record(std::move(out), in, [a, bias, p, q](Tape& t, std::span<const double> g) {
    if (auto da = t.grad_buffer(a); !da.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (auto db = t.grad_buffer(bias); !db.empty()) {
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) db[j] += g[i * q + j];
      }
    }
  });
}

Tensor Tape::scale(Tensor a, double factor) {
  check_owned(a, "scale");
  Array out = a.value();
  for (double& v : out.data) v *= factor;
  const Tensor in[] = {a};
  return record(std::move(out), in, [a, factor](Tape& t, std::span<const double> g) {
    auto da = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * factor;
  });
}

Tensor Tape::slice_cols(Tensor a, std::size_t begin, std::size_t count) {
  check_owned(a, "slice_cols");
  require_rank(a, 2, "slice_cols");
  const std::size_t p = a.shape()[0], q = a.shape()[1];
  if (begin + count > q) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " + to_string(a.shape()));
  }
  Array out = Array::zeros({p, count});
  const auto ad = a.data();
  for (std::size_t i = 0; i < p; ++i) {
    std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>(i * q + begin), count,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * count));
  }
  const Tensor in[] = {a};
  return record(std::move(out), in, [a, p, q, begin, count](Tape& t, std::span<const double> g) {
    auto da = t.grad_buffer(a);
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < count; ++j) da[i * q + begin + j] += g[i * count + j];
    }
  });
}

Tensor Tape::time_step(Tensor seq, std::size_t step) {
  check_owned(seq, "time_step");
  require_rank(seq, 3, "time_step");
  const std::size_t b = seq.shape()[0], m = seq.shape()[1], n = seq.shape()[2];
  if (step >= m) {
    throw DimensionError("time_step: step " + std::to_string(step) + " out of range for " +
                         to_string(seq.shape()));
  }
  Array out = Array::zeros({b, n});
  const auto sd = seq.data();
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(sd.begin() + static_cast<std::ptrdiff_t>((i * m + step) * n), n,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  const Tensor in[] = {seq};
  return record(std::move(out), in, [seq, b, m, n, step](Tape& t, std::span<const double> g) {
    auto ds = t.grad_buffer(seq);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < n; ++j) ds[(i * m + step) * n + j] += g[i * n + j];
    }
  });
}

Tensor Tape::sum(Tensor a) {
  check_owned(a, "sum");
  double s = 0.0;
  for (double v : a.data()) s += v;
  const Tensor in[] = {a};
  return record(Array({1}, {s}), in, [a](Tape& t, std::span<const double> g) {
    auto da = t.grad_buffer(a);
    for (double& v : da) v += g[0];
  });
}

Tensor Tape::mse_loss(Tensor pred, Tensor target) {
  check_owned(pred, "mse_loss");
  check_owned(target, "mse_loss");
  if (pred.size() != target.size()) {
    throw DimensionError("mse_loss: length mismatch " + to_string(pred.shape()) + " vs " +
                         to_string(target.shape()));
  }
  const std::size_t k = pred.size();
  if (k == 0) throw DomainError("mse_loss: empty input");
  const auto pd = pred.data();
  const auto td = target.data();
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += (pd[i] - td[i]) * (pd[i] - td[i]);
  const Tensor in[] = {pred, target};
  return record(Array({1}, {s / static_cast<double>(k)}), in,
                [pred, target, k](Tape& t, std::span<const double> g) {
                  const auto& p = t.node(pred).value.data;
                  const auto& y = t.node(target).value.data;
                  const double c = 2.0 * g[0] / static_cast<double>(k);
                  if (auto dp = t.grad_buffer(pred); !dp.empty()) {
                    for (std::size_t i = 0; i < k; ++i) dp[i] += c * (p[i] - y[i]);
                  }
                  if (auto dy = t.grad_buffer(target); !dy.empty()) {
                    for (std::size_t i = 0; i < k; ++i) dy[i] -= c * (p[i] - y[i]);
                  }
                });
}

// ---------------------------------------------------------------------------

GradCheckResult finite_diff_check(const ScalarFn& f, const Array& x, double step, double tol) {
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor xin = tape.leaf(x, true);
    Tensor y = f(tape, xin);
    tape.backward(y);
    const auto g = xin.grad();
    analytic.assign(g.begin(), g.end());
  }
  auto eval_at = [&](const Array& point) {
    Tape tape;
    return f(tape, tape.leaf(point, false)).item();
  };

  GradCheckResult res;
  Array probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + step;
    const double up = eval_at(probe);
    probe.data[i] = orig - step;
    const double down = eval_at(probe);
    probe.data[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    const double err = std::abs(analytic[i] - numeric) / denom;
    if (err > res.max_rel_error || !std::isfinite(err)) {
      res.max_rel_error = err;
      res.worst_index = i;
    }
  }
  res.passed = std::isfinite(res.max_rel_error) && res.max_rel_error <= tol;
  return res;
}

}  // namespace uap::nd
