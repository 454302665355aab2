#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deeprnmt {

#ifdef DEEPRNMT_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << " x ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

struct DimError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class Tape;

// Dense array of reals plus an optional same-shape gradient accumulator.
// The gradient is allocated lazily on first accumulation and persists until
// zero_grad, so leaves accumulate across backward calls.
struct TensorData {
  Shape shape;
  std::vector<Real> v;
  std::vector<Real> g;
  bool requires_grad = false;
  Tape* tape = nullptr;  // graph that produced this tensor, null for leaves
  int32_t node = -1;     // index of the producing node in that graph

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  void ensure_grad() {
    if (g.empty()) g.assign(v.size(), Real(0));
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto d = std::make_shared<TensorData>();
    int64_t n = shape_numel(shape);
    d->shape = std::move(shape);
    d->v.assign(static_cast<size_t>(n), Real(0));
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw DimError("tensor: " + shape_str(shape) + " cannot hold " +
                     std::to_string(values.size()) + " values");
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->v = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor scalar(Real x) { return from({}, {x}); }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  size_t rank() const { return d_->shape.size(); }
  int64_t numel() const { return d_->numel(); }
  int64_t extent(size_t axis) const { return d_->shape[axis]; }

  std::vector<Real>& values() { return d_->v; }
  const std::vector<Real>& values() const { return d_->v; }
  Real item() const {
    if (d_->v.size() != 1)
      throw DimError("item: tensor " + shape_str(d_->shape) + " is not a scalar");
    return d_->v[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }
  bool has_grad() const { return !d_->g.empty(); }
  std::vector<Real>& grad() {
    d_->ensure_grad();
    return d_->g;
  }
  const std::vector<Real>& grad() const { return d_->g; }
  void zero_grad() { d_->g.clear(); }

  TensorData* data() const { return d_.get(); }
  const std::shared_ptr<TensorData>& ptr() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

// Record of one forward pass. Nodes are stored in execution order, which is
// a valid topological order for the reverse sweep. One tape per worker.
class Tape {
 public:
  struct Node {
    std::vector<Tensor> in;
    Tensor out;
    std::function<void(Node&)> back;
    const char* op = "";
  };

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

  // RAII activation; ops record onto the innermost active tape.
  struct Scope {
    explicit Scope(Tape& t) : prev_(active()) { active() = &t; }
    ~Scope() { active() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  // RAII deactivation for pure evaluation (decoding, validation scoring).
  struct Suspend {
    Suspend() : prev_(active()) { active() = nullptr; }
    ~Suspend() { active() = prev_; }
    Suspend(const Suspend&) = delete;
    Suspend& operator=(const Suspend&) = delete;

   private:
    Tape* prev_;
  };

  std::vector<Node>& nodes() { return nodes_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  void record(std::vector<Tensor> in, const Tensor& out, std::function<void(Node&)> back,
              const char* op) {
    out.data()->tape = this;
    out.data()->node = static_cast<int32_t>(nodes_.size());
    nodes_.push_back(Node{std::move(in), out, std::move(back), op});
  }

  // Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
  // loss. Intermediate gradients are consumed and released as the sweep
  // passes them, so repeated calls compose additively on the leaves.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1 || !loss.shape().empty())
      throw DimError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    if (loss.data()->tape != this)
      throw std::logic_error("backward: tensor was not produced by this graph");
    loss.data()->ensure_grad();
    loss.data()->g[0] += Real(1);
    for (int32_t i = loss.data()->node; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      TensorData* out = n.out.data();
      if (out->g.empty()) continue;
      n.back(n);
      if (out->node >= 0) out->g.clear();  // intermediate: consumed
    }
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

namespace detail {

// Records the node if a tape is active and some input carries gradient.
// The input vector and the backward closure are only materialized when the
// node is actually recorded, which keeps tape-less evaluation cheap.
template <typename F, typename... Ins>
inline void record(Tensor& out, const char* op, F&& back, const Ins&... ins) {
  bool rg = (ins.requires_grad() || ...);
  out.set_requires_grad(rg);
  Tape* tape = Tape::active();
  if (tape && rg) tape->record(std::vector<Tensor>{ins...}, out, std::forward<F>(back), op);
}

template <typename F>
inline void record_many(std::vector<Tensor> in, Tensor& out, const char* op, F&& back) {
  bool rg = false;
  for (const Tensor& t : in) rg = rg || t.requires_grad();
  out.set_requires_grad(rg);
  Tape* tape = Tape::active();
  if (tape && rg) tape->record(std::move(in), out, std::forward<F>(back), op);
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

// Binary ops accept equal shapes or a matrix with a vector broadcast over its
// rows. Returns the row length when broadcasting, 0 for the same-shape case.
inline int64_t broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return 0;
  if (a.rank() == 2 && b.rank() == 1 && a.extent(1) == b.extent(0)) return b.extent(0);
  throw DimError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " vs " +
                 shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise binary ops ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  int64_t row = detail::broadcast_kind(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  if (row == 0)
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  else
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i % static_cast<size_t>(row)];
  detail::record(out, "add",
                 [row](Tape::Node& n) {
                   const auto& g = n.out.data()->g;
                   if (n.in[0].requires_grad()) {
                     auto& ga = n.in[0].grad();
                     for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   }
                   if (n.in[1].requires_grad()) {
                     auto& gb = n.in[1].grad();
                     if (row == 0)
                       for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                     else
                       for (size_t i = 0; i < g.size(); ++i)
                         gb[i % static_cast<size_t>(row)] += g[i];
                   }
                 },
                 a, b);
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  int64_t row = detail::broadcast_kind(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  if (row == 0)
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
  else
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i % static_cast<size_t>(row)];
  detail::record(out, "sub",
                 [row](Tape::Node& n) {
                   const auto& g = n.out.data()->g;
                   if (n.in[0].requires_grad()) {
                     auto& ga = n.in[0].grad();
                     for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   }
                   if (n.in[1].requires_grad()) {
                     auto& gb = n.in[1].grad();
                     if (row == 0)
                       for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                     else
                       for (size_t i = 0; i < g.size(); ++i)
                         gb[i % static_cast<size_t>(row)] -= g[i];
                   }
                 },
                 a, b);
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  int64_t row = detail::broadcast_kind(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  if (row == 0)
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  else
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i % static_cast<size_t>(row)];
  detail::record(out, "mul",
                 [row](Tape::Node& n) {
                   const auto& g = n.out.data()->g;
                   const auto& av2 = n.in[0].values();
                   const auto& bv2 = n.in[1].values();
                   if (n.in[0].requires_grad()) {
                     auto& ga = n.in[0].grad();
                     if (row == 0)
                       for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
                     else
                       for (size_t i = 0; i < g.size(); ++i)
                         ga[i] += g[i] * bv2[i % static_cast<size_t>(row)];
                   }
                   if (n.in[1].requires_grad()) {
                     auto& gb = n.in[1].grad();
                     if (row == 0)
                       for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
                     else
                       for (size_t i = 0; i < g.size(); ++i)
                         gb[i % static_cast<size_t>(row)] += g[i] * av2[i];
                   }
                 },
                 a, b);
  return out;
}

inline Tensor scale(const Tensor& a, Real c) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * c;
  detail::record(out, "scale",
                 [c](Tape::Node& n) {
                   if (!n.in[0].requires_grad()) return;
                   const auto& g = n.out.data()->g;
                   auto& ga = n.in[0].grad();
                   for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
                 },
                 a);
  return out;
}

// ---- elementwise unary ops ----

inline Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = Real(1) / (Real(1) + std::exp(-av[i]));
  detail::record(out, "sigmoid",
                 [](Tape::Node& n) {
                   if (!n.in[0].requires_grad()) return;
                   const auto& g = n.out.data()->g;
                   const auto& y = n.out.values();
                   auto& ga = n.in[0].grad();
                   for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (Real(1) - y[i]);
                 },
                 a);
  return out;
}

inline Tensor tanh(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = std::tanh(av[i]);
  detail::record(out, "tanh",
                 [](Tape::Node& n) {
                   if (!n.in[0].requires_grad()) return;
                   const auto& g = n.out.data()->g;
                   const auto& y = n.out.values();
                   auto& ga = n.in[0].grad();
                   for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (Real(1) - y[i] * y[i]);
                 },
                 a);
  return out;
}

// ---- shape ops ----

inline Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1)
    throw DimError("concat: expects vectors, got " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
  int64_t na = a.extent(0), nb = b.extent(0);
  Tensor out = Tensor::zeros({na + nb});
  auto& ov = out.values();
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int64_t i = 0; i < na; ++i) ov[static_cast<size_t>(i)] = av[static_cast<size_t>(i)];
  for (int64_t i = 0; i < nb; ++i) ov[static_cast<size_t>(na + i)] = bv[static_cast<size_t>(i)];
  detail::record(out, "concat",
                 [na](Tape::Node& n) {
                   const auto& g = n.out.data()->g;
                   if (n.in[0].requires_grad()) {
                     auto& ga = n.in[0].grad();
                     for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                   }
                   if (n.in[1].requires_grad()) {
                     auto& gb = n.in[1].grad();
                     for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[static_cast<size_t>(na) + i];
                   }
                 },
                 a, b);
  return out;
}

inline Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimError("concat: no inputs");
  Tensor out = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) out = concat(out, parts[i]);
  return out;
}

inline Tensor slice(const Tensor& a, int64_t lo, int64_t hi) {
  if (a.rank() != 1) throw DimError("slice: expects a vector, got " + shape_str(a.shape()));
  if (lo < 0 || hi > a.extent(0) || lo >= hi)
    throw DimError("slice: range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                   ") out of bounds for " + shape_str(a.shape()));
  Tensor out = Tensor::zeros({hi - lo});
  auto& ov = out.values();
  const auto& av = a.values();
  for (int64_t i = lo; i < hi; ++i) ov[static_cast<size_t>(i - lo)] = av[static_cast<size_t>(i)];
  detail::record(out, "slice",
                 [lo](Tape::Node& n) {
                   if (!n.in[0].requires_grad()) return;
                   const auto& g = n.out.data()->g;
                   auto& ga = n.in[0].grad();
                   for (size_t i = 0; i < g.size(); ++i) ga[static_cast<size_t>(lo) + i] += g[i];
                 },
                 a);
  return out;
}

// Builds an [n x k] matrix from n row vectors.
inline Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw DimError("stack_rows: no inputs");
  int64_t k = rows[0].extent(0);
  for (const Tensor& r : rows)
    if (r.rank() != 1 || r.extent(0) != k)
      throw DimError("stack_rows: row shape " + shape_str(r.shape()) + " does not match [" +
                     std::to_string(k) + "]");
  int64_t n = static_cast<int64_t>(rows.size());
  Tensor out = Tensor::zeros({n, k});
  auto& ov = out.values();
  for (int64_t i = 0; i < n; ++i) {
    const auto& rv = rows[static_cast<size_t>(i)].values();
    for (int64_t j = 0; j < k; ++j) ov[static_cast<size_t>(i * k + j)] = rv[static_cast<size_t>(j)];
  }
  detail::record_many(std::vector<Tensor>(rows.begin(), rows.end()), out, "stack_rows",
                      [k](Tape::Node& n) {
                        const auto& g = n.out.data()->g;
                        for (size_t i = 0; i < n.in.size(); ++i) {
                          if (!n.in[i].requires_grad()) continue;
                          auto& gr = n.in[i].grad();
                          for (int64_t j = 0; j < k; ++j)
                            gr[static_cast<size_t>(j)] +=
                                g[i * static_cast<size_t>(k) + static_cast<size_t>(j)];
                        }
                      });
  return out;
}

// Row i of a matrix as a vector.
inline Tensor row(const Tensor& a, int64_t i) {
  if (a.rank() != 2) throw DimError("row: expects a matrix, got " + shape_str(a.shape()));
  if (i < 0 || i >= a.extent(0))
    throw DimError("row: index " + std::to_string(i) + " out of range for " +
                   shape_str(a.shape()));
  int64_t k = a.extent(1);
  Tensor out = Tensor::zeros({k});
  auto& ov = out.values();
  const auto& av = a.values();
  for (int64_t j = 0; j < k; ++j) ov[static_cast<size_t>(j)] = av[static_cast<size_t>(i * k + j)];
  detail::record(out, "row",
                 [i, k](Tape::Node& n) {
                   if (!n.in[0].requires_grad()) return;
                   const auto& g = n.out.data()->g;
                   auto& ga = n.in[0].grad();
                   for (int64_t j = 0; j < k; ++j)
                     ga[static_cast<size_t>(i * k + j)] += g[static_cast<size_t>(j)];
                 },
                 a);
  return out;
}

// ---- reductions (sequential left-to-right summation for determinism) ----

inline Tensor sum(const Tensor& a) {
  Tensor out = Tensor::zeros({});
  Real acc = 0;
  for (Real x : a.values()) acc += x;
  out.values()[0] = acc;
  detail::record(out, "sum",
                 [](Tape::Node& n) {
                   if (!n.in[0].requires_grad()) return;
                   Real g = n.out.data()->g[0];
                   auto& ga = n.in[0].grad();
                   for (Real& x : ga) x += g;
                 },
                 a);
  return out;
}

inline Tensor mean(const Tensor& a) {
  int64_t n = a.numel();
  if (n == 0) throw DimError("mean: empty tensor");
  Tensor out = Tensor::zeros({});
  Real acc = 0;
  for (Real x : a.values()) acc += x;
  out.values()[0] = acc / static_cast<Real>(n);
  detail::record(out, "mean",
                 [n](Tape::Node& n_) {
                   if (!n_.in[0].requires_grad()) return;
                   Real g = n_.out.data()->g[0] / static_cast<Real>(n);
                   auto& ga = n_.in[0].grad();
                   for (Real& x : ga) x += g;
                 },
                 a);
  return out;
}

// Element i of a vector as a scalar.
inline Tensor pick(const Tensor& a, int64_t i) {
  if (a.rank() != 1) throw DimError("pick: expects a vector, got " + shape_str(a.shape()));
  if (i < 0 || i >= a.extent(0))
    throw DimError("pick: index " + std::to_string(i) + " out of range for " +
                   shape_str(a.shape()));
  Tensor out = Tensor::zeros({});
  out.values()[0] = a.values()[static_cast<size_t>(i)];
  detail::record(out, "pick",
                 [i](Tape::Node& n) {
                   if (!n.in[0].requires_grad()) return;
                   n.in[0].grad()[static_cast<size_t>(i)] += n.out.data()->g[0];
                 },
                 a);
  return out;
}

// ---- matmul ----
// [m x k]*[k x n] -> [m x n]; a vector operand is treated as a row vector on
// the left ([k]*[k x n] -> [n]) or a column vector on the right
// ([m x k]*[k] -> [m]). Inner sums run over k in ascending order.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool a_vec = a.rank() == 1, b_vec = b.rank() == 1;
  if ((a.rank() != 1 && a.rank() != 2) || (b.rank() != 1 && b.rank() != 2))
    throw DimError("matmul: unsupported ranks " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
  const int64_t m = a_vec ? 1 : a.extent(0);
  const int64_t ka = a_vec ? a.extent(0) : a.extent(1);
  const int64_t kb = b_vec ? b.extent(0) : b.extent(0);
  const int64_t nn = b_vec ? 1 : b.extent(1);
  if (ka != kb)
    throw DimError("matmul: inner extents disagree: " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
  const int64_t k = ka;

  Shape out_shape;
  if (a_vec && b_vec)
    out_shape = {};
  else if (a_vec)
    out_shape = {nn};
  else if (b_vec)
    out_shape = {m};
  else
    out_shape = {m, nn};

  Tensor out = Tensor::zeros(out_shape);
  const Real* av = a.values().data();
  const Real* bv = b.values().data();
  Real* ov = out.values().data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < nn; ++j) {
      Real acc = 0;
      const Real* arow = av + i * k;
      for (int64_t t = 0; t < k; ++t) acc += arow[t] * bv[t * nn + j];
      ov[i * nn + j] = acc;
    }

  detail::record(out, "matmul",
                 [m, nn, k](Tape::Node& n) {
                   const Real* g = n.out.data()->g.data();
                   const Real* av2 = n.in[0].values().data();
                   const Real* bv2 = n.in[1].values().data();
                   if (n.in[0].requires_grad()) {
                     Real* ga = n.in[0].grad().data();
                     // a.grad += g * b^T
                     for (int64_t i = 0; i < m; ++i)
                       for (int64_t t = 0; t < k; ++t) {
                         Real acc = 0;
                         for (int64_t j = 0; j < nn; ++j) acc += g[i * nn + j] * bv2[t * nn + j];
                         ga[i * k + t] += acc;
                       }
                   }
                   if (n.in[1].requires_grad()) {
                     Real* gb = n.in[1].grad().data();
                     // b.grad += a^T * g
                     for (int64_t t = 0; t < k; ++t)
                       for (int64_t j = 0; j < nn; ++j) {
                         Real acc = 0;
                         for (int64_t i = 0; i < m; ++i) acc += av2[i * k + t] * g[i * nn + j];
                         gb[t * nn + j] += acc;
                       }
                   }
                 },
                 a, b);
  return out;
}

// backward entry point matching the rest of the op API
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.data()->tape == nullptr)
    throw std::logic_error("backward: tensor is detached from any graph");
  loss.data()->tape->backward(loss);
}

}  // namespace deeprnmt
