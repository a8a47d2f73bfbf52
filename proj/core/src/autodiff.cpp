#include "rectattn/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "rectattn/errors.hpp"

namespace rectattn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

const Tensor& Var::value() const { return tape_->value(id_); }
Tape& Var::tape() const { return *tape_; }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& GradSink::value(NodeId id) const { return tape_.value(id); }

Tensor* GradSink::grad(NodeId id) {
  if (!tape_.requires_grad(id)) return nullptr;
  if (!touched_[id]) {
    grads_[id] = Tensor(tape_.value(id).shape(), 0.0);
    touched_[id] = 1;
  }
  return &grads_[id];
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool participates = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw std::invalid_argument("operand recorded on a different tape");
    participates = participates || requires_grad(in.id());
  }
  nodes_.push_back(Node{std::move(value), participates ? std::move(backward) : BackwardFn{},
                        participates, false});
  return Var(this, nodes_.size() - 1);
}

const Tensor* Gradients::find(const Var& v) const {
  auto it = grads_.find(v.id());
  return it == grads_.end() ? nullptr : &it->second;
}

const Tensor& Gradients::at(const Var& v) const {
  const Tensor* g = find(v);
  if (!g) throw std::out_of_range("no gradient recorded for node " + std::to_string(v.id()));
  return *g;
}

Gradients backward(const Var& loss) {
  if (!loss.valid()) throw std::invalid_argument("backward on an unbound Var");
  if (loss.value().numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  }
  Tape& tape = loss.tape();
  if (!tape.requires_grad(loss.id())) {
    throw DomainError("loss does not depend on any differentiable leaf");
  }
  const std::size_t n = loss.id() + 1;
  std::vector<Tensor> grads(n);
  std::vector<char> touched(n, 0);
  GradSink sink(tape, grads, touched);
  (*sink.grad(loss.id()))[0] = 1.0;

  for (std::size_t k = n; k-- > 0;) {
    if (!touched[k]) continue;
    const Tape::Node& node = tape.nodes_[k];
    if (node.backward) node.backward(grads[k], sink);
  }

  Gradients out;
  for (std::size_t k = 0; k < n; ++k) {
    const Tape::Node& node = tape.nodes_[k];
    if (node.leaf && node.requires_grad) {
      out.grads_.emplace(k, touched[k] ? std::move(grads[k]) : Tensor(node.value.shape(), 0.0));
    } else if (touched[k] && !node.leaf) {
      grads[k] = Tensor();  // free intermediates early
    }
  }
  return out;
}

// ---- elementwise -----------------------------------------------------------

namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double apply_unary(UnaryKind kind, double x) {
  switch (kind) {
    case UnaryKind::sigmoid: return stable_sigmoid(x);
    case UnaryKind::relu: return x > 0 ? x : 0.0;
    case UnaryKind::tanh: return std::tanh(x);
    case UnaryKind::softplus: return stable_softplus(x);
    case UnaryKind::square: return x * x;
    case UnaryKind::neg: return -x;
    case UnaryKind::sin: return std::sin(x);
    case UnaryKind::cos: return std::cos(x);
    case UnaryKind::exp: return std::exp(x);
  }
  return 0.0;
}

// Derivative expressed through the input x and output y.
double unary_derivative(UnaryKind kind, double x, double y) {
  switch (kind) {
    case UnaryKind::sigmoid: return y * (1.0 - y);
    case UnaryKind::relu: return x > 0 ? 1.0 : 0.0;
    case UnaryKind::tanh: return 1.0 - y * y;
    case UnaryKind::softplus: return stable_sigmoid(x);
    case UnaryKind::square: return 2.0 * x;
    case UnaryKind::neg: return -1.0;
    case UnaryKind::sin: return std::cos(x);
    case UnaryKind::cos: return -std::sin(x);
    case UnaryKind::exp: return y;
  }
  return 0.0;
}

// Per-output-dimension strides into each operand (0 along broadcast dims).
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_stride;
  std::vector<std::size_t> b_stride;
};

std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - in.size();
  for (std::size_t k = in.size(); k-- > 0;) {
    strides[k + offset] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  plan.out = broadcast_shape(a, b);
  plan.a_stride = aligned_strides(a, plan.out);
  plan.b_stride = aligned_strides(b, plan.out);
  return plan;
}

// Calls fn(out_index, a_index, b_index) over every output element.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
  const std::size_t rank = plan.out.size();
  const std::size_t total = shape_numel(plan.out);
  if (rank == 0) {
    fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  const std::size_t inner = plan.out[rank - 1];
  const std::size_t sa = plan.a_stride[rank - 1];
  const std::size_t sb = plan.b_stride[rank - 1];
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) fn(o + j, ia + j * sa, ib + j * sb);
    // advance the odometer over the leading dims
    for (std::size_t k = rank - 1; k-- > 0;) {
      ++idx[k];
      ia += plan.a_stride[k];
      ib += plan.b_stride[k];
      if (idx[k] < plan.out[k]) break;
      ia -= plan.a_stride[k] * idx[k];
      ib -= plan.b_stride[k] * idx[k];
      idx[k] = 0;
    }
  }
}

Var scalar_const(const Var& like, double v) { return like.tape().constant(Tensor::scalar(v)); }

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[k] = std::max(da, db);
  }
  return out;
}

Var unary(UnaryKind kind, const Var& x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = apply_unary(kind, xv[i]);
  Tape& tape = x.tape();
  const NodeId xid = x.id();
  const NodeId yid = tape.size();  // id the output node receives
  return tape.record(std::move(y), {x}, [kind, xid, yid](const Tensor& g, GradSink& s) {
    const Tensor& xv = s.value(xid);
    const Tensor& yv = s.value(yid);
    Tensor* gx = s.grad(xid);
    for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * unary_derivative(kind, xv[i], yv[i]);
  });
}

Var binary(BinaryKind kind, const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (kind == BinaryKind::div) {
    for (double d : bv.data()) {
      if (d == 0.0) throw DomainError("division by zero");
    }
  }
  BroadcastPlan plan = plan_broadcast(av.shape(), bv.shape());
  Tensor y(plan.out);
  double* yp = y.ptr();
  const double* ap = av.ptr();
  const double* bp = bv.ptr();
  switch (kind) {
    case BinaryKind::add:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { yp[o] = ap[i] + bp[j]; });
      break;
    case BinaryKind::sub:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { yp[o] = ap[i] - bp[j]; });
      break;
    case BinaryKind::mul:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { yp[o] = ap[i] * bp[j]; });
      break;
    case BinaryKind::div:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { yp[o] = ap[i] / bp[j]; });
      break;
  }
  const NodeId aid = a.id();
  const NodeId bid = b.id();
  return a.tape().record(
      std::move(y), {a, b}, [kind, aid, bid, plan = std::move(plan)](const Tensor& g, GradSink& s) {
        const double* ap = s.value(aid).ptr();
        const double* bp = s.value(bid).ptr();
        Tensor* ga = s.grad(aid);
        Tensor* gb = s.grad(bid);
        double* gap = ga ? ga->ptr() : nullptr;
        double* gbp = gb ? gb->ptr() : nullptr;
        const double* gp = g.ptr();
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
          const double go = gp[o];
          switch (kind) {
            case BinaryKind::add:
              if (gap) gap[i] += go;
              if (gbp) gbp[j] += go;
              break;
            case BinaryKind::sub:
              if (gap) gap[i] += go;
              if (gbp) gbp[j] -= go;
              break;
            case BinaryKind::mul:
              if (gap) gap[i] += go * bp[j];
              if (gbp) gbp[j] += go * ap[i];
              break;
            case BinaryKind::div:
              if (gap) gap[i] += go / bp[j];
              if (gbp) gbp[j] -= go * ap[i] / (bp[j] * bp[j]);
              break;
          }
        });
      });
}

Var operator+(const Var& a, const Var& b) { return binary(BinaryKind::add, a, b); }
Var operator-(const Var& a, const Var& b) { return binary(BinaryKind::sub, a, b); }
Var operator*(const Var& a, const Var& b) { return binary(BinaryKind::mul, a, b); }
Var operator/(const Var& a, const Var& b) { return binary(BinaryKind::div, a, b); }
Var operator-(const Var& x) { return neg(x); }
Var operator+(const Var& a, double b) { return a + scalar_const(a, b); }
Var operator+(double a, const Var& b) { return scalar_const(b, a) + b; }
Var operator-(const Var& a, double b) { return a - scalar_const(a, b); }
Var operator-(double a, const Var& b) { return scalar_const(b, a) - b; }
Var operator*(const Var& a, double b) { return a * scalar_const(a, b); }
Var operator*(double a, const Var& b) { return scalar_const(b, a) * b; }
Var operator/(const Var& a, double b) { return a / scalar_const(a, b); }

Var clamp(const Var& x, double lo, double hi) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = std::clamp(xv[i], lo, hi);
  const NodeId xid = x.id();
  return x.tape().record(std::move(y), {x}, [xid, lo, hi](const Tensor& g, GradSink& s) {
    const Tensor& xv = s.value(xid);
    Tensor* gx = s.grad(xid);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (xv[i] >= lo && xv[i] <= hi) (*gx)[i] += g[i];
    }
  });
}

Var wrap_angle(const Var& x) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    double w = std::fmod(xv[i], two_pi);
    if (w <= -std::numbers::pi) w += two_pi;
    if (w > std::numbers::pi) w -= two_pi;
    y[i] = w;
  }
  const NodeId xid = x.id();
  return x.tape().record(std::move(y), {x}, [xid](const Tensor& g, GradSink& s) {
    Tensor* gx = s.grad(xid);
    for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
  });
}

// ---- structural ------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) throw ShapeError("matmul needs rank-2 operands");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul inner dimensions differ: " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  Tensor y(Shape{m, n});
  MatMap(y.ptr(), m, n).noalias() = ConstMatMap(av.ptr(), m, k) * ConstMatMap(bv.ptr(), k, n);
  const NodeId aid = a.id();
  const NodeId bid = b.id();
  return a.tape().record(std::move(y), {a, b}, [aid, bid, m, k, n](const Tensor& g, GradSink& s) {
    ConstMatMap gm(g.ptr(), m, n);
    if (Tensor* ga = s.grad(aid)) {
      MatMap(ga->ptr(), m, k).noalias() += gm * ConstMatMap(s.value(bid).ptr(), k, n).transpose();
    }
    if (Tensor* gb = s.grad(bid)) {
      MatMap(gb->ptr(), k, n).noalias() += ConstMatMap(s.value(aid).ptr(), m, k).transpose() * gm;
    }
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const NodeId xid = x.id();
  return x.tape().record(Tensor::scalar(total), {x}, [xid](const Tensor& g, GradSink& s) {
    Tensor* gx = s.grad(xid);
    for (double& v : gx->data()) v += g[0];
  });
}

Var mean(const Var& x) { return sum(x) * (1.0 / static_cast<double>(x.value().numel())); }

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t k = 0; k < axis; ++k) s.outer *= shape[k];
  s.extent = shape[axis];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) s.inner *= shape[k];
  return s;
}

Shape without_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

}  // namespace

Var sum_axis(const Var& x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisSplit sp = split_at(xv.shape(), axis);
  Tensor y(without_axis(xv.shape(), axis));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.extent; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i)
        y[o * sp.inner + i] += xv[(o * sp.extent + k) * sp.inner + i];
  const NodeId xid = x.id();
  return x.tape().record(std::move(y), {x}, [xid, sp](const Tensor& g, GradSink& s) {
    Tensor* gx = s.grad(xid);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.extent; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i)
          (*gx)[(o * sp.extent + k) * sp.inner + i] += g[o * sp.inner + i];
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  const NodeId xid = x.id();
  return x.tape().record(std::move(y), {x}, [xid](const Tensor& g, GradSink& s) {
    Tensor* gx = s.grad(xid);
    for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
  });
}

Var select(const Var& x, std::size_t axis, std::size_t index) {
  const Tensor& xv = x.value();
  const AxisSplit sp = split_at(xv.shape(), axis);
  if (index >= sp.extent) throw ShapeError("select index out of range");
  Tensor y(without_axis(xv.shape(), axis));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i)
      y[o * sp.inner + i] = xv[(o * sp.extent + index) * sp.inner + i];
  const NodeId xid = x.id();
  return x.tape().record(std::move(y), {x}, [xid, sp, index](const Tensor& g, GradSink& s) {
    Tensor* gx = s.grad(xid);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i)
        (*gx)[(o * sp.extent + index) * sp.inner + i] += g[o * sp.inner + i];
  });
}

Var stack(std::span<const Var> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("stack of zero tensors");
  const Shape& base = xs[0].shape();
  for (const Var& v : xs) {
    if (v.shape() != base) throw ShapeError("stack operands differ in shape");
  }
  if (axis > base.size()) throw ShapeError("stack axis out of range");
  Shape out_shape = base;
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), xs.size());
  const AxisSplit sp = split_at(out_shape, axis);
  Tensor y(out_shape);
  for (std::size_t k = 0; k < sp.extent; ++k) {
    const Tensor& src = xs[k].value();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i)
        y[(o * sp.extent + k) * sp.inner + i] = src[o * sp.inner + i];
  }
  std::vector<NodeId> ids;
  for (const Var& v : xs) ids.push_back(v.id());
  return xs[0].tape().record(std::move(y), xs, [ids, sp](const Tensor& g, GradSink& s) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor* gk = s.grad(ids[k]);
      if (!gk) continue;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i)
          (*gk)[o * sp.inner + i] += g[(o * sp.extent + k) * sp.inner + i];
    }
  });
}

// ---- verification ----------------------------------------------------------

double grad_check(const TapeFunction& fn, const Tensor& x, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check needs eps > 0");
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x);
    Var loss = fn(tape, xv);
    analytic = backward(loss).at(xv);
  }
  auto eval = [&](const Tensor& point) {
    Tape tape;
    Var xv = tape.constant(point);
    return fn(tape, xv).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    const double central = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - central) / std::max(1.0, std::abs(central)));
  }
  return worst;
}

}  // namespace rectattn
