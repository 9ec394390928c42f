#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tape owns every value produced during one forward pass. Tensor is a
// lightweight handle into its tape; it is only valid while the tape lives.
// Tapes are single-threaded; build one per forward pass.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace uap::nd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Plain value buffer, row-major.
struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  Array(Shape s, std::vector<double> d);
  static Array zeros(Shape s);
  static Array filled(Shape s, double v);

  std::size_t size() const { return data.size(); }
  bool operator==(const Array&) const = default;
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::span<const double> data() const;
  bool requires_grad() const;
  bool has_grad() const;
  // Empty span when no gradient has been populated.
  std::span<const double> grad() const;
  double item() const;
  std::size_t size() const { return data().size(); }
  Array value() const;

  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  const Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Accumulates into the grad buffers of the node's inputs. `out_grad` is the
  // gradient of the recorded output.
  using BackwardFn = std::function<void(Tape& tape, std::span<const double> out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Array value, bool requires_grad = false);

  // Records a custom op. requires_grad is derived from the inputs.
  Tensor record(Array value, std::span<const Tensor> inputs, BackwardFn backward);

  Tensor matmul(Tensor a, Tensor b);
  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor mul(Tensor a, Tensor b);
  Tensor sigmoid(Tensor a);
  Tensor tanh(Tensor a);
  // a[p×q] + bias[q] added to every row.
  Tensor add_row_bias(Tensor a, Tensor bias);
  Tensor scale(Tensor a, double factor);
  // Columns [begin, begin+count) of a 2-D tensor.
  Tensor slice_cols(Tensor a, std::size_t begin, std::size_t count);
  // Time slice t of a [batch, steps, features] tensor, as [batch, features].
  Tensor time_step(Tensor seq, std::size_t t);
  Tensor sum(Tensor a);
  Tensor mse_loss(Tensor pred, Tensor target);

  // Populates grad on every requires_grad tensor reachable from loss. Allowed
  // once per tape.
  void backward(Tensor loss);

  // Gradient accumulator for a node, allocated on demand. Used by backward
  // rules of recorded ops.
  std::span<double> grad_buffer(Tensor t);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Tensor;

  struct Node {
    Array value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(Tensor t) const;
  Node& node(Tensor t);
  void check_owned(Tensor t, const char* op) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Row-major dense kernels used by the ops. All accumulate into C.
namespace blas {
// C[p×r] += A[p×q] · B[q×r]
void gemm(std::size_t p, std::size_t q, std::size_t r, const double* a, const double* b,
          double* c);
// C[p×q] += A[p×r] · B[q×r]^T
void gemm_bt(std::size_t p, std::size_t q, std::size_t r, const double* a, const double* b,
             double* c);
// C[q×r] += A[p×q]^T · B[p×r]
void gemm_at(std::size_t p, std::size_t q, std::size_t r, const double* a, const double* b,
             double* c);
double dot(const double* a, const double* b, std::size_t n);
double sigmoid(double v);
// Branch-free, vectorizable variants used by the fused recurrent cells.
// exp is accurate to about 1 ulp on [-700, 700] (inputs are clamped there);
// tanh carries an absolute error near 1e-16 around zero.
void vexp(const double* in, double* out, std::size_t n);
void vsigmoid(double* v, std::size_t n);
void vtanh(double* v, std::size_t n);
}  // namespace blas

struct GradCheckResult {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

// Builds a scalar from its input on a fresh tape.
using ScalarFn = std::function<Tensor(Tape&, Tensor)>;

// Compares the tape gradient of f at x with central differences, coordinate
// by coordinate. Relative error is |a-n| / max(|a|, |n|, 1e-6).
GradCheckResult finite_diff_check(const ScalarFn& f, const Array& x, double step = 1e-5,
                                  double tol = 1e-4);

}  // namespace uap::nd
