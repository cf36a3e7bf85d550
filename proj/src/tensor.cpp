#include "sbir/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sbir {

namespace {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void rank_error(const char* op, const Shape& a) {
  throw std::invalid_argument(std::string(op) + ": unsupported shape " +
                              shape_str(a));
}

void check_finite(const char* op, const Tensor& t) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string(op) + ": non-finite input value");
    }
  }
}

Tape* common_tape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.tape() && b.tape() && a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op) +
                                ": operands bound to different tapes");
  }
  return a.tape() ? a.tape() : b.tape();
}

/// Routes an op result through the tape when any input is bound.
Tensor emit(OpKind op, const char* name, Shape shape,
            std::vector<double> values, const Tensor& a, const Tensor& b,
            double c = 0.0) {
  Tape* t = common_tape(name, a, b);
  if (t == nullptr) return Tensor(std::move(shape), std::move(values));
  return t->record(op, std::move(shape), std::move(values), a, b, c);
}

Tensor emit(OpKind op, const char* name, Shape shape,
            std::vector<double> values, const Tensor& a, double c = 0.0) {
  return emit(op, name, std::move(shape), std::move(values), a, Tensor{}, c);
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << ',';
    out << s[i];
  }
  out << ']';
  return out.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != values.size()) {
    throw std::invalid_argument("tensor: " + shape_str(shape_) + " holds " +
                                std::to_string(shape_numel(shape_)) +
                                " values, got " + std::to_string(values.size()));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, {v}); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v));
}

std::size_t Tensor::size() const { return data_ ? data_->size() : 0; }

std::size_t Tensor::rows() const {
  if (rank() != 2) rank_error("rows", shape_);
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) rank_error("cols", shape_);
  return shape_[1];
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item: tensor of shape " + shape_str(shape_) +
                                " is not a scalar");
  }
  return (*data_)[0];
}

double Tensor::at(std::size_t i) const { return (*data_).at(i); }

double Tensor::at(std::size_t i, std::size_t j) const {
  return (*data_).at(i * cols() + j);
}

const std::vector<double>& Tensor::values() const {
  static const std::vector<double> empty;
  return data_ ? *data_ : empty;
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

// ---- elementwise binaries --------------------------------------------------

namespace {

enum class BinKind { Add, Sub, Mul, Div };

double apply_bin(BinKind k, double x, double y) {
  switch (k) {
    case BinKind::Add: return x + y;
    case BinKind::Sub: return x - y;
    case BinKind::Mul: return x * y;
    case BinKind::Div: return x / y;
  }
  return 0.0;
}

/// Normalizes broadcasting, then records a same-shape binary node.
Tensor binary_op(BinKind k, OpKind op, const char* name, const Tensor& a,
                 const Tensor& b) {
  check_finite(name, a);
  check_finite(name, b);
  const Tensor* lhs = &a;
  const Tensor* rhs = &b;
  Tensor lifted;
  auto lift = [&](const Tensor& small, const Tensor& big) -> const Tensor* {
    if (small.size() == 1) {
      lifted = broadcast_full(small, big.shape());
      return &lifted;
    }
    if (small.rank() == 1 && big.rank() == 2 && small.size() == big.cols()) {
      lifted = broadcast_rows(small, big.rows());
      return &lifted;
    }
    return nullptr;
  };
  if (a.shape() != b.shape()) {
    if (const Tensor* r = lift(b, a)) {
      rhs = r;
    } else if (const Tensor* l = lift(a, b)) {
      lhs = l;
      rhs = &b;
    } else {
      shape_error(name, a.shape(), b.shape());
    }
  }
  const auto& x = lhs->values();
  const auto& y = rhs->values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = apply_bin(k, x[i], y[i]);
  return emit(op, name, lhs->shape(), std::move(out), *lhs, *rhs);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::Add, OpKind::kAdd, "add", a, b);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::Sub, OpKind::kSub, "subtract", a, b);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::Mul, OpKind::kMul, "multiply", a, b);
}
Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::Div, OpKind::kDiv, "divide", a, b);
}

Tensor scale(const Tensor& a, double c) {
  check_finite("scale", a);
  if (!std::isfinite(c)) throw std::domain_error("scale: non-finite factor");
  std::vector<double> out(a.values());
  for (double& v : out) v *= c;
  return emit(OpKind::kScale, "scale", a.shape(), std::move(out), a, c);
}

Tensor add_scalar(const Tensor& a, double c) {
  check_finite("add_scalar", a);
  if (!std::isfinite(c)) throw std::domain_error("add_scalar: non-finite addend");
  std::vector<double> out(a.values());
  for (double& v : out) v += c;
  return emit(OpKind::kAddScalar, "add_scalar", a.shape(), std::move(out), a, c);
}

// ---- matrix products --------------------------------------------------------

namespace {

// C (n x m) = A (n x k) * B (k x m); ikj order keeps B accesses contiguous.
void matmul_nn(const double* a, const double* b, double* c, std::size_t n,
               std::size_t k, std::size_t m) {
  std::fill(c, c + n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (n x m) = A (n x k) * B^T (B is m x k); row-by-row dot products.
void matmul_nt_raw(const double* a, const double* b, double* c, std::size_t n,
                   std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
}

// C (k x m) = A^T (A is n x k) * B (n x m).
void matmul_tn_raw(const double* a, const double* b, double* c, std::size_t n,
                   std::size_t k, std::size_t m) {
  std::fill(c, c + k * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      double av = arow[p];
      double* crow = c + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_finite("matmul", a);
  check_finite("matmul", b);
  if (a.rank() != 2 || b.rank() != 2) {
    shape_error("matmul", a.shape(), b.shape());
  }
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions do not conform: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m);
  matmul_nn(a.values().data(), b.values().data(), out.data(), n, k, m);
  return emit(OpKind::kMatMul, "matmul", Shape{n, m}, std::move(out), a, b);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_finite("matmul_nt", a);
  check_finite("matmul_nt", b);
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: inner dimensions do not conform: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  std::vector<double> out(n * m);
  matmul_nt_raw(a.values().data(), b.values().data(), out.data(), n, k, m);
  return emit(OpKind::kMatMulNT, "matmul_nt", Shape{n, m}, std::move(out), a, b);
}

Tensor transpose(const Tensor& a) {
  check_finite("transpose", a);
  if (a.rank() != 2) rank_error("transpose", a.shape());
  std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = a.values()[i * m + j];
  return emit(OpKind::kTranspose, "transpose", Shape{m, n}, std::move(out), a);
}

// ---- elementwise unaries -----------------------------------------------------

namespace {

template <class F>
Tensor unary_op(OpKind op, const char* name, const Tensor& a, double c, F f) {
  check_finite(name, a);
  std::vector<double> out(a.values());
  for (double& v : out) v = f(v);
  return emit(op, name, a.shape(), std::move(out), a, c);
}

}  // namespace

Tensor relu(const Tensor& a) {
  return unary_op(OpKind::kRelu, "relu", a, 0.0,
                  [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary_op(OpKind::kSquare, "square", a, 0.0,
                  [](double v) { return v * v; });
}

Tensor sqrt_eps(const Tensor& a, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("sqrt_eps: eps must be > 0");
  return unary_op(OpKind::kSqrtEps, "sqrt_eps", a, eps,
                  [eps](double v) { return std::sqrt(v + eps); });
}

Tensor sqrt_or_zero(const Tensor& a, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("sqrt_or_zero: eps must be > 0");
  return unary_op(OpKind::kSqrtOrZero, "sqrt_or_zero", a, eps,
                  [eps](double v) { return v > 0.0 ? std::sqrt(v + eps) : 0.0; });
}

Tensor abs_each(const Tensor& a) {
  return unary_op(OpKind::kAbs, "abs", a, 0.0,
                  [](double v) { return std::fabs(v); });
}

Tensor exp_each(const Tensor& a) {
  return unary_op(OpKind::kExp, "exp", a, 0.0,
                  [](double v) { return std::exp(v); });
}

Tensor log_each(const Tensor& a) {
  check_finite("log", a);
  for (double v : a.values()) {
    if (v <= 0.0) throw std::domain_error("log: input must be positive");
  }
  return unary_op(OpKind::kLog, "log", a, 0.0,
                  [](double v) { return std::log(v); });
}

Tensor huber_each(const Tensor& a, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("huber: delta must be > 0");
  return unary_op(OpKind::kHuber, "huber", a, delta, [delta](double v) {
    double av = std::fabs(v);
    return av <= delta ? 0.5 * v * v : delta * (av - 0.5 * delta);
  });
}

Tensor clamp_min(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw std::domain_error("clamp_min: non-finite bound");
  return unary_op(OpKind::kClampMin, "clamp_min", a, c,
                  [c](double v) { return v > c ? v : c; });
}

// ---- reductions ---------------------------------------------------------------

Tensor row_sum(const Tensor& a) {
  check_finite("row_sum", a);
  if (a.rank() != 2) rank_error("row_sum", a.shape());
  std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += a.values()[i * m + j];
  return emit(OpKind::kRowSum, "row_sum", Shape{n}, std::move(out), a);
}

Tensor col_sum(const Tensor& a) {
  check_finite("col_sum", a);
  if (a.rank() != 2) rank_error("col_sum", a.shape());
  std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += a.values()[i * m + j];
  return emit(OpKind::kColSum, "col_sum", Shape{m}, std::move(out), a);
}

Tensor sum_all(const Tensor& a) {
  check_finite("sum", a);
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return emit(OpKind::kSumAll, "sum", Shape{}, {acc}, a);
}

Tensor mean_all(const Tensor& a) {
  check_finite("mean", a);
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return emit(OpKind::kMeanAll, "mean", Shape{}, {acc / a.size()}, a);
}

Tensor max_all(const Tensor& a) {
  check_finite("max", a);
  if (a.size() == 0) throw std::invalid_argument("max: empty tensor");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < a.size(); ++i) {
    if (a.values()[i] > a.values()[arg]) arg = i;  // first index wins ties
  }
  return emit(OpKind::kMaxAll, "max", Shape{}, {a.values()[arg]}, a,
              static_cast<double>(arg));
}

Tensor row_max(const Tensor& a) {
  check_finite("row_max", a);
  if (a.rank() != 2 || a.cols() == 0) rank_error("row_max", a.shape());
  std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = a.values().data() + i * m;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (row[j] > row[arg]) arg = j;
    out[i] = row[arg];
  }
  return emit(OpKind::kRowMax, "row_max", Shape{n}, std::move(out), a);
}

Tensor diag_part(const Tensor& a) {
  check_finite("diag_part", a);
  if (a.rank() != 2 || a.rows() != a.cols()) rank_error("diag_part", a.shape());
  std::size_t n = a.rows();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i * n + i];
  return emit(OpKind::kDiagPart, "diag_part", Shape{n}, std::move(out), a);
}

// ---- broadcasts ---------------------------------------------------------------

Tensor broadcast_rows(const Tensor& v, std::size_t n_rows) {
  check_finite("broadcast_rows", v);
  if (v.rank() != 1 || n_rows == 0) rank_error("broadcast_rows", v.shape());
  std::size_t m = v.size();
  std::vector<double> out(n_rows * m);
  for (std::size_t i = 0; i < n_rows; ++i)
    std::copy(v.values().begin(), v.values().end(), out.begin() + i * m);
  return emit(OpKind::kBroadcastRows, "broadcast_rows", Shape{n_rows, m},
              std::move(out), v);
}

Tensor broadcast_cols(const Tensor& v, std::size_t n_cols) {
  check_finite("broadcast_cols", v);
  if (v.rank() != 1 || n_cols == 0) rank_error("broadcast_cols", v.shape());
  std::size_t n = v.size();
  std::vector<double> out(n * n_cols);
  for (std::size_t i = 0; i < n; ++i)
    std::fill(out.begin() + i * n_cols, out.begin() + (i + 1) * n_cols,
              v.values()[i]);
  return emit(OpKind::kBroadcastCols, "broadcast_cols", Shape{n, n_cols},
              std::move(out), v);
}

Tensor broadcast_full(const Tensor& s, Shape shape) {
  check_finite("broadcast_full", s);
  if (s.size() != 1) rank_error("broadcast_full", s.shape());
  std::size_t n = shape_numel(shape);
  return emit(OpKind::kBroadcastFull, "broadcast_full", std::move(shape),
              std::vector<double>(n, s.values()[0]), s);
}

// ---- pairwise squared distances -------------------------------------------------

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  check_finite("pairwise_sqdist", a);
  check_finite("pairwise_sqdist", b);
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    shape_error("pairwise_sqdist", a.shape(), b.shape());
  }
  std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.values().data() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b.values().data() + j * d;
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = ai[k] - bj[k];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
  }
  return emit(OpKind::kPairwiseSqDist, "pairwise_sqdist", Shape{n, m},
              std::move(out), a, b);
}

// ---- composites -----------------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
  if (a.rank() != 2) rank_error("softmax_rows", a.shape());
  Tensor shifted = sub(a, broadcast_cols(row_max(a), a.cols()));
  Tensor e = exp_each(shifted);
  return div(e, broadcast_cols(row_sum(e), a.cols()));
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> idx) {
  if (m.rank() != 2) rank_error("gather_rows", m.shape());
  std::size_t d = m.cols();
  std::vector<double> out;
  out.reserve(idx.size() * d);
  for (std::size_t i : idx) {
    if (i >= m.rows()) throw std::out_of_range("gather_rows: row out of range");
    const double* row = m.values().data() + i * d;
    out.insert(out.end(), row, row + d);
  }
  return Tensor(Shape{idx.size(), d}, std::move(out));
}

// ---- Tape -----------------------------------------------------------------------

Tensor Tape::watch(const Tensor& t) {
  if (t.tape_ != nullptr) {
    throw std::invalid_argument("watch: tensor is already bound to a tape");
  }
  Node node;
  node.op = OpKind::kLeaf;
  Tensor bound = t;
  bound.tape_ = this;
  bound.node_ = static_cast<int>(nodes_.size());
  node.out = bound;
  nodes_.push_back(std::move(node));
  return bound;
}

Tensor Tape::record(OpKind op, Shape shape, std::vector<double> values,
                    const Tensor& a, const Tensor& b, double c) {
  Node node;
  node.op = op;
  node.in0 = (a.tape_ == this) ? a.node_ : -1;
  node.in1 = (b.tape_ == this) ? b.node_ : -1;
  node.a = a.detached();
  node.b = b.detached();
  node.c = c;
  Tensor bound(std::move(shape), std::move(values));
  bound.tape_ = this;
  bound.node_ = static_cast<int>(nodes_.size());
  node.out = bound;
  nodes_.push_back(std::move(node));
  return bound;
}

namespace {

void accumulate(std::vector<double>& dst, std::size_t size,
                std::size_t at, double v) {
  if (dst.empty()) dst.assign(size, 0.0);
  dst[at] += v;
}

std::vector<double>& ensure(std::vector<double>& dst, std::size_t size) {
  if (dst.empty()) dst.assign(size, 0.0);
  return dst;
}

}  // namespace

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.tape_ != this || loss.node_ < 0) {
    throw std::invalid_argument("backward: loss is not bound to this tape");
  }
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  Gradients result;
  result.tape_ = this;
  result.grads_.resize(nodes_.size());
  auto& grads = result.grads_;
  grads[loss.node_] = {1.0};

  for (int id = loss.node_; id >= 0; --id) {
    const Node& nd = nodes_[id];
    const std::vector<double>& g = grads[id];
    if (g.empty() || nd.op == OpKind::kLeaf) continue;
    const auto& av = nd.a.values();
    const auto& bv = nd.b.values();
    const auto& ov = nd.out.values();

    auto g0 = [&]() -> std::vector<double>& {
      return ensure(grads[nd.in0], av.size());
    };
    auto g1 = [&]() -> std::vector<double>& {
      return ensure(grads[nd.in1], bv.size());
    };
    bool w0 = nd.in0 >= 0;
    bool w1 = nd.in1 >= 0;

    switch (nd.op) {
      case OpKind::kAdd:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i]; }
        if (w1) { auto& d = g1(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i]; }
        break;
      case OpKind::kSub:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i]; }
        if (w1) { auto& d = g1(); for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i]; }
        break;
      case OpKind::kMul:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i]; }
        if (w1) { auto& d = g1(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i]; }
        break;
      case OpKind::kDiv:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / bv[i]; }
        if (w1) {
          auto& d = g1();
          for (std::size_t i = 0; i < g.size(); ++i)
            d[i] -= g[i] * av[i] / (bv[i] * bv[i]);
        }
        break;
      case OpKind::kScale:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * nd.c; }
        break;
      case OpKind::kAddScalar:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i]; }
        break;
      case OpKind::kMatMul: {
        std::size_t n = nd.a.rows(), k = nd.a.cols(), m = nd.b.cols();
        if (w0) {
          std::vector<double> da(n * k);
          matmul_nt_raw(g.data(), bv.data(), da.data(), n, m, k);
          auto& d = g0();
          for (std::size_t i = 0; i < da.size(); ++i) d[i] += da[i];
        }
        if (w1) {
          std::vector<double> db(k * m);
          matmul_tn_raw(av.data(), g.data(), db.data(), n, k, m);
          auto& d = g1();
          for (std::size_t i = 0; i < db.size(); ++i) d[i] += db[i];
        }
        break;
      }
      case OpKind::kMatMulNT: {
        std::size_t n = nd.a.rows(), k = nd.a.cols(), m = nd.b.rows();
        if (w0) {
          std::vector<double> da(n * k);
          matmul_nn(g.data(), bv.data(), da.data(), n, m, k);
          auto& d = g0();
          for (std::size_t i = 0; i < da.size(); ++i) d[i] += da[i];
        }
        if (w1) {
          std::vector<double> db(m * k);
          matmul_tn_raw(g.data(), av.data(), db.data(), n, m, k);
          auto& d = g1();
          for (std::size_t i = 0; i < db.size(); ++i) d[i] += db[i];
        }
        break;
      }
      case OpKind::kTranspose: {
        if (w0) {
          std::size_t n = nd.a.rows(), m = nd.a.cols();
          auto& d = g0();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) d[i * m + j] += g[j * n + i];
        }
        break;
      }
      case OpKind::kRelu:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) if (av[i] > 0.0) d[i] += g[i]; }
        break;
      case OpKind::kSquare:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * 2.0 * av[i]; }
        break;
      case OpKind::kSqrtEps:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * 0.5 / ov[i]; }
        break;
      case OpKind::kSqrtOrZero:
        if (w0) {
          auto& d = g0();
          for (std::size_t i = 0; i < g.size(); ++i)
            if (av[i] > 0.0) d[i] += g[i] * 0.5 / ov[i];
        }
        break;
      case OpKind::kAbs:
        if (w0) {
          auto& d = g0();
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (av[i] > 0.0) d[i] += g[i];
            else if (av[i] < 0.0) d[i] -= g[i];
          }
        }
        break;
      case OpKind::kExp:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * ov[i]; }
        break;
      case OpKind::kLog:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / av[i]; }
        break;
      case OpKind::kHuber:
        if (w0) {
          auto& d = g0();
          double delta = nd.c;
          for (std::size_t i = 0; i < g.size(); ++i) {
            double v = av[i];
            double dv = std::fabs(v) <= delta ? v : (v > 0.0 ? delta : -delta);
            d[i] += g[i] * dv;
          }
        }
        break;
      case OpKind::kClampMin:
        if (w0) { auto& d = g0(); for (std::size_t i = 0; i < g.size(); ++i) if (av[i] > nd.c) d[i] += g[i]; }
        break;
      case OpKind::kRowSum:
        if (w0) {
          std::size_t n = nd.a.rows(), m = nd.a.cols();
          auto& d = g0();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) d[i * m + j] += g[i];
        }
        break;
      case OpKind::kColSum:
        if (w0) {
          std::size_t n = nd.a.rows(), m = nd.a.cols();
          auto& d = g0();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) d[i * m + j] += g[j];
        }
        break;
      case OpKind::kSumAll:
        if (w0) { auto& d = g0(); for (double& v : d) v += g[0]; }
        break;
      case OpKind::kMeanAll:
        if (w0) {
          auto& d = g0();
          double s = g[0] / static_cast<double>(av.size());
          for (double& v : d) v += s;
        }
        break;
      case OpKind::kMaxAll:
        if (w0) accumulate(grads[nd.in0], av.size(),
                           static_cast<std::size_t>(nd.c), g[0]);
        break;
      case OpKind::kRowMax:
        if (w0) {
          std::size_t n = nd.a.rows(), m = nd.a.cols();
          auto& d = g0();
          for (std::size_t i = 0; i < n; ++i) {
            const double* row = av.data() + i * m;
            std::size_t arg = 0;
            for (std::size_t j = 1; j < m; ++j)
              if (row[j] > row[arg]) arg = j;
            d[i * m + arg] += g[i];
          }
        }
        break;
      case OpKind::kDiagPart:
        if (w0) {
          std::size_t n = nd.a.rows();
          auto& d = g0();
          for (std::size_t i = 0; i < n; ++i) d[i * n + i] += g[i];
        }
        break;
      case OpKind::kBroadcastRows:
        if (w0) {
          std::size_t m = av.size();
          std::size_t n = nd.out.rows();
          auto& d = g0();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) d[j] += g[i * m + j];
        }
        break;
      case OpKind::kBroadcastCols:
        if (w0) {
          std::size_t n = av.size();
          std::size_t m = nd.out.cols();
          auto& d = g0();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) d[i] += g[i * m + j];
        }
        break;
      case OpKind::kBroadcastFull:
        if (w0) {
          auto& d = g0();
          double acc = 0.0;
          for (double gv : g) acc += gv;
          d[0] += acc;
        }
        break;
      case OpKind::kPairwiseSqDist: {
        std::size_t n = nd.a.rows(), m = nd.b.rows(), dim = nd.a.cols();
        if (w0) {
          auto& d = g0();
          for (std::size_t i = 0; i < n; ++i) {
            const double* ai = av.data() + i * dim;
            for (std::size_t j = 0; j < m; ++j) {
              double gv = 2.0 * g[i * m + j];
              if (gv == 0.0) continue;
              const double* bj = bv.data() + j * dim;
              double* di = d.data() + i * dim;
              for (std::size_t k = 0; k < dim; ++k) di[k] += gv * (ai[k] - bj[k]);
            }
          }
        }
        if (w1) {
          auto& d = g1();
          for (std::size_t i = 0; i < n; ++i) {
            const double* ai = av.data() + i * dim;
            for (std::size_t j = 0; j < m; ++j) {
              double gv = 2.0 * g[i * m + j];
              if (gv == 0.0) continue;
              const double* bj = bv.data() + j * dim;
              double* dj = d.data() + j * dim;
              for (std::size_t k = 0; k < dim; ++k) dj[k] += gv * (bj[k] - ai[k]);
            }
          }
        }
        break;
      }
      case OpKind::kLeaf:
        break;
    }
  }
  return result;
}

Tensor Gradients::at(const Tensor& t) const {
  if (t.tape() != tape_ || t.node_id() < 0) {
    throw std::invalid_argument(
        "gradients: tensor is not bound to the originating tape");
  }
  const auto& g = grads_[t.node_id()];
  if (g.empty()) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), g);
}

}  // namespace sbir
