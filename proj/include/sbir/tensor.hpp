#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sbir {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

class Tape;

/// Dense row-major tensor of 64-bit floats.
///
/// A Tensor is an immutable value: ops never modify their inputs, they
/// produce new tensors. A tensor is either a plain constant or bound to a
/// node on a Tape, in which case every op consuming it is recorded so that
/// Tape::backward can run reverse-mode differentiation. Binding happens via
/// Tape::watch (leaves) or by being the output of a recorded op.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const;
  /// Rank-2 accessors.
  std::size_t rows() const;
  std::size_t cols() const;

  bool is_scalar() const { return size() == 1; }
  /// Value of a single-element tensor.
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  const std::vector<double>& values() const;

  /// True when bound to a tape (participates in gradient computation).
  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node_id() const { return node_; }

  /// Same values, no tape binding. The stop-gradient primitive.
  Tensor detached() const;

 private:
  friend class Tape;
  Shape shape_{0};
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

enum class OpKind : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kMatMul,
  kMatMulNT,
  kTranspose,
  kRelu,
  kSquare,
  kSqrtEps,
  kSqrtOrZero,
  kAbs,
  kExp,
  kLog,
  kHuber,
  kClampMin,
  kRowSum,
  kColSum,
  kSumAll,
  kMeanAll,
  kMaxAll,
  kRowMax,
  kDiagPart,
  kBroadcastRows,
  kBroadcastCols,
  kBroadcastFull,
  kPairwiseSqDist,
};

class Gradients;

/// Wengert list for one differentiable computation. Nodes are appended in
/// execution order, which is a topological order by construction. A tape is
/// confined to one step of work on one thread; tensors bound to it must not
/// be fed into new ops after the tape is destroyed (their values stay valid).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a plain tensor as a differentiable leaf and returns the bound
  /// handle. Gradients are reported per leaf after backward().
  Tensor watch(const Tensor& t);

  /// Reverse pass from a scalar loss. Visits each node at most once, in
  /// reverse topological order. Leaves not reachable from the loss get zero
  /// gradients (see Gradients::at).
  Gradients backward(const Tensor& loss) const;

  std::size_t size() const { return nodes_.size(); }

  /// Used by the op implementations; not part of the public surface.
  Tensor record(OpKind op, Shape shape, std::vector<double> values,
                const Tensor& a, const Tensor& b, double c);

 private:
  friend class Gradients;
  struct Node {
    OpKind op;
    int in0 = -1;
    int in1 = -1;
    Tensor a;  // saved input values (empty for leaves)
    Tensor b;
    Tensor out;
    double c = 0.0;  // op parameter: eps, delta, scale, saved argmax, ...
  };
  std::vector<Node> nodes_;
};

/// Result of Tape::backward: gradient values per node of that tape.
class Gradients {
 public:
  /// Gradient of the loss w.r.t. a tensor bound to the originating tape.
  /// Returns zeros for bound tensors the loss does not reach.
  Tensor at(const Tensor& t) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<std::vector<double>> grads_;
};

// ---- op set -------------------------------------------------------------
//
// Binary elementwise ops accept identical shapes, a single-element operand
// (broadcast to the other side), or a rank-1 operand of length d against a
// rank-2 n-by-d operand (broadcast over the leading batch dim). Every op
// rejects non-finite inputs.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a times b-transposed; the layout-friendly product for row-major weights.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
/// sqrt(x + eps) elementwise; smooth everywhere, used where a variance or
/// norm sits under the root.
Tensor sqrt_eps(const Tensor& a, double eps);
/// Distance flavor of the guarded root: x > 0 -> sqrt(x + eps), else 0.
/// Keeps exactly-coincident points at distance exactly zero while bounding
/// the gradient near zero. The jump at 0+ is a documented kink.
Tensor sqrt_or_zero(const Tensor& a, double eps);
Tensor abs_each(const Tensor& a);
Tensor exp_each(const Tensor& a);
Tensor log_each(const Tensor& a);
/// Elementwise Huber value: |x| <= delta -> x^2/2, else delta*(|x|-delta/2).
Tensor huber_each(const Tensor& a, double delta);
/// max(x, c) elementwise; gradient passes only where x > c.
Tensor clamp_min(const Tensor& a, double c);

Tensor row_sum(const Tensor& a);  // n x m -> n
Tensor col_sum(const Tensor& a);  // n x m -> m
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
/// Max over all elements; ties broken by first (row-major) index, and the
/// gradient flows only to the selected element.
Tensor max_all(const Tensor& a);
Tensor row_max(const Tensor& a);  // n x m -> n, first-index tie-break
Tensor diag_part(const Tensor& a);

Tensor broadcast_rows(const Tensor& v, std::size_t n_rows);  // m -> n x m
Tensor broadcast_cols(const Tensor& v, std::size_t n_cols);  // n -> n x m
Tensor broadcast_full(const Tensor& s, Shape shape);         // scalar -> any

/// Squared euclidean distances between all row pairs: (n x d, m x d) -> n x m.
/// Computed as explicit coordinate sums, so coincident rows give exactly 0.
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);

/// Numerically stable per-row softmax (composite of primitive ops).
Tensor softmax_rows(const Tensor& a);

/// Rows of m selected by index, as a plain constant tensor. Assembly helper
/// for batching; not differentiable.
Tensor gather_rows(const Tensor& m, std::span<const std::size_t> idx);

}  // namespace sbir
