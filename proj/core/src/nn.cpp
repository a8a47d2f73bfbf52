#include "rectattn/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "rectattn/errors.hpp"

namespace rectattn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

Var ParamBinder::operator()(const Parameter& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  Var v = trainable_ ? tape_.leaf(p.value) : tape_.constant(p.value);
  bound_.emplace(&p, v);
  return v;
}

Tensor ParamBinder::gradient(const Gradients& grads, const Parameter& p) const {
  auto it = bound_.find(&p);
  if (it != bound_.end()) {
    if (const Tensor* g = grads.find(it->second)) return *g;
  }
  return Tensor(p.value.shape(), 0.0);
}

std::vector<Tensor> ParamBinder::gradients(const Gradients& grads,
                                           std::span<Parameter* const> params) const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(gradient(grads, *p));
  return out;
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& geo) {
  if (geo.stride == 0 || geo.dilation == 0) throw ShapeError("conv stride and dilation must be positive");
  const long long span = static_cast<long long>(geo.dilation) * (static_cast<long long>(kernel) - 1) + 1;
  const long long padded = static_cast<long long>(in) + 2 * static_cast<long long>(geo.padding);
  if (padded < span) {
    throw ShapeError("conv output would be empty: input " + std::to_string(in) + ", kernel span " +
                     std::to_string(span));
  }
  return static_cast<std::size_t>((padded - span) / static_cast<long long>(geo.stride) + 1);
}

namespace {

// Promotes [C,H,W] to [1,C,H,W]; returns whether it did.
bool as_batched(const Var& x, Var& batched) {
  if (x.value().rank() == 4) {
    batched = x;
    return false;
  }
  if (x.value().rank() == 3) {
    Shape s = x.shape();
    s.insert(s.begin(), 1);
    batched = reshape(x, s);
    return true;
  }
  throw ShapeError("expected [C,H,W] or [N,C,H,W], got " + shape_str(x.shape()));
}

Var drop_batch(const Var& y) {
  Shape s = y.shape();
  s.erase(s.begin());
  return reshape(y, s);
}

struct ConvDims {
  std::size_t n, c, h, w, o, kh, kw, ho, wo;
  std::size_t p() const { return ho * wo; }
  std::size_t ckk() const { return c * kh * kw; }
};

void im2col(const double* x, const ConvDims& d, const ConvGeometry& g, double* cols) {
  const std::size_t total = d.n * d.p();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const double* plane = x + (n * d.c + c) * d.h * d.w;
      for (std::size_t ki = 0; ki < d.kh; ++ki) {
        for (std::size_t kj = 0; kj < d.kw; ++kj) {
          const std::size_t row = (c * d.kh + ki) * d.kw + kj;
          double* dst = cols + row * total + n * d.p();
          for (std::size_t oh = 0; oh < d.ho; ++oh) {
            const long long ih = static_cast<long long>(oh * g.stride + ki * g.dilation) -
                                 static_cast<long long>(g.padding);
            double* out = dst + oh * d.wo;
            if (ih < 0 || ih >= static_cast<long long>(d.h)) {
              std::fill(out, out + d.wo, 0.0);
              continue;
            }
            const double* src = plane + ih * d.w;
            for (std::size_t ow = 0; ow < d.wo; ++ow) {
              const long long iw = static_cast<long long>(ow * g.stride + kj * g.dilation) -
                                   static_cast<long long>(g.padding);
              out[ow] = (iw < 0 || iw >= static_cast<long long>(d.w)) ? 0.0 : src[iw];
            }
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvDims& d, const ConvGeometry& g, double* dx) {
  const std::size_t total = d.n * d.p();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      double* plane = dx + (n * d.c + c) * d.h * d.w;
      for (std::size_t ki = 0; ki < d.kh; ++ki) {
        for (std::size_t kj = 0; kj < d.kw; ++kj) {
          const std::size_t row = (c * d.kh + ki) * d.kw + kj;
          const double* src = cols + row * total + n * d.p();
          for (std::size_t oh = 0; oh < d.ho; ++oh) {
            const long long ih = static_cast<long long>(oh * g.stride + ki * g.dilation) -
                                 static_cast<long long>(g.padding);
            if (ih < 0 || ih >= static_cast<long long>(d.h)) continue;
            double* dst = plane + ih * d.w;
            for (std::size_t ow = 0; ow < d.wo; ++ow) {
              const long long iw = static_cast<long long>(ow * g.stride + kj * g.dilation) -
                                   static_cast<long long>(g.padding);
              if (iw >= 0 && iw < static_cast<long long>(d.w)) dst[iw] += src[oh * d.wo + ow];
            }
          }
        }
      }
    }
  }
}

Var conv2d_batched(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& geo) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (wv.rank() != 4) throw ShapeError("conv weight must be [O,C,kh,kw], got " + shape_str(wv.shape()));
  ConvDims d{};
  d.n = xv.dim(0);
  d.c = xv.dim(1);
  d.h = xv.dim(2);
  d.w = xv.dim(3);
  d.o = wv.dim(0);
  d.kh = wv.dim(2);
  d.kw = wv.dim(3);
  if (wv.dim(1) != d.c) {
    throw ShapeError("conv expects " + std::to_string(wv.dim(1)) + " input channels, got " +
                     std::to_string(d.c));
  }
  const bool has_bias = bias.valid();
  if (has_bias && bias.value().shape() != Shape{d.o}) throw ShapeError("conv bias must be [O]");
  d.ho = conv_output_extent(d.h, d.kh, geo);
  d.wo = conv_output_extent(d.w, d.kw, geo);

  const std::size_t total = d.n * d.p();
  std::vector<double> cols(d.ckk() * total);
  im2col(xv.ptr(), d, geo, cols.data());

  RowMatrix out = ConstMatMap(wv.ptr(), d.o, d.ckk()) * ConstMatMap(cols.data(), d.ckk(), total);
  Tensor y(Shape{d.n, d.o, d.ho, d.wo});
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      const double b = has_bias ? bias.value()[o] : 0.0;
      const double* src = out.data() + o * total + n * d.p();
      double* dst = y.ptr() + (n * d.o + o) * d.p();
      for (std::size_t q = 0; q < d.p(); ++q) dst[q] = src[q] + b;
    }
  }

  const NodeId xid = x.id();
  const NodeId wid = weight.id();
  const NodeId bid = has_bias ? bias.id() : 0;
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  const bool keep_cols = weight.requires_grad();
  if (!keep_cols) cols.clear();
  return x.tape().record(
      std::move(y), inputs,
      [d, geo, xid, wid, bid, has_bias, cols = std::move(cols)](const Tensor& g, GradSink& s) {
        const std::size_t total = d.n * d.p();
        RowMatrix gm(d.o, total);
        for (std::size_t n = 0; n < d.n; ++n)
          for (std::size_t o = 0; o < d.o; ++o)
            std::copy_n(g.ptr() + (n * d.o + o) * d.p(), d.p(), gm.data() + o * total + n * d.p());
        if (Tensor* gw = s.grad(wid)) {
          MatMap(gw->ptr(), d.o, d.ckk()).noalias() +=
              gm * ConstMatMap(cols.data(), d.ckk(), total).transpose();
        }
        if (has_bias) {
          if (Tensor* gb = s.grad(bid)) {
            for (std::size_t o = 0; o < d.o; ++o) (*gb)[o] += gm.row(static_cast<Eigen::Index>(o)).sum();
          }
        }
        if (Tensor* gx = s.grad(xid)) {
          RowMatrix dcols = ConstMatMap(s.value(wid).ptr(), d.o, d.ckk()).transpose() * gm;
          col2im(dcols.data(), d, geo, gx->ptr());
        }
      });
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& geo) {
  Var xb;
  const bool promoted = as_batched(x, xb);
  Var y = conv2d_batched(xb, weight, bias, geo);
  return promoted ? drop_batch(y) : y;
}

Var maxpool2d(const Var& x, std::size_t k) {
  if (k == 0) throw ShapeError("pool size must be positive");
  Var xb;
  const bool promoted = as_batched(x, xb);
  const Tensor& xv = xb.value();
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % k != 0 || w % k != 0) {
    throw ShapeError("maxpool extent " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by " + std::to_string(k));
  }
  const std::size_t ho = h / k, wo = w / k;
  Tensor y(Shape{n, c, ho, wo});
  std::vector<std::uint32_t> argmax(y.numel());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = xv.ptr() + plane * h * w;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        std::size_t best = (oh * k) * w + ow * k;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t at = (oh * k + i) * w + ow * k + j;
            if (src[at] > src[best]) best = at;
          }
        const std::size_t out = plane * ho * wo + oh * wo + ow;
        y[out] = src[best];
        argmax[out] = static_cast<std::uint32_t>(best);
      }
    }
  }
  const NodeId xid = xb.id();
  const std::size_t hw = h * w, howo = ho * wo;
  Var out = xb.tape().record(std::move(y), {xb},
                             [xid, hw, howo, argmax = std::move(argmax)](const Tensor& g, GradSink& s) {
                               Tensor* gx = s.grad(xid);
                               for (std::size_t i = 0; i < g.numel(); ++i)
                                 (*gx)[(i / howo) * hw + argmax[i]] += g[i];
                             });
  return promoted ? drop_batch(out) : out;
}

Var global_avg_pool(const Var& x) {
  Var xb;
  const bool promoted = as_batched(x, xb);
  const Tensor& xv = xb.value();
  const std::size_t planes = xv.dim(0) * xv.dim(1);
  const std::size_t hw = xv.dim(2) * xv.dim(3);
  Tensor y(Shape{xv.dim(0), xv.dim(1)});
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += xv[p * hw + i];
    y[p] = acc / static_cast<double>(hw);
  }
  const NodeId xid = xb.id();
  Var out = xb.tape().record(std::move(y), {xb}, [xid, hw](const Tensor& g, GradSink& s) {
    Tensor* gx = s.grad(xid);
    const double scale = 1.0 / static_cast<double>(hw);
    for (std::size_t p = 0; p < g.numel(); ++p)
      for (std::size_t i = 0; i < hw; ++i) (*gx)[p * hw + i] += g[p] * scale;
  });
  if (!promoted) return out;
  return reshape(out, Shape{xv.dim(1)});
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& wv = w.value();
  if (wv.rank() != 2) throw ShapeError("linear weight must be [out,in]");
  const std::size_t out_dim = wv.dim(0), in_dim = wv.dim(1);
  if (b.value().shape() != Shape{out_dim}) throw ShapeError("linear bias must be [out]");
  const bool single = x.value().rank() == 1;
  const Tensor& xv = x.value();
  if ((single && xv.dim(0) != in_dim) || (!single && (xv.rank() != 2 || xv.dim(1) != in_dim))) {
    throw ShapeError("linear expects input width " + std::to_string(in_dim) + ", got " +
                     shape_str(xv.shape()));
  }
  const std::size_t n = single ? 1 : xv.dim(0);
  Tensor y(single ? Shape{out_dim} : Shape{n, out_dim});
  MatMap ym(y.ptr(), n, out_dim);
  ym.noalias() = ConstMatMap(xv.ptr(), n, in_dim) * ConstMatMap(wv.ptr(), out_dim, in_dim).transpose();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out_dim; ++o) ym(r, o) += b.value()[o];
  const NodeId xid = x.id(), wid = w.id(), bid = b.id();
  return x.tape().record(std::move(y), {x, w, b}, [=](const Tensor& g, GradSink& s) {
    ConstMatMap gm(g.ptr(), n, out_dim);
    if (Tensor* gx = s.grad(xid)) {
      MatMap(gx->ptr(), n, in_dim).noalias() += gm * ConstMatMap(s.value(wid).ptr(), out_dim, in_dim);
    }
    if (Tensor* gw = s.grad(wid)) {
      MatMap(gw->ptr(), out_dim, in_dim).noalias() +=
          gm.transpose() * ConstMatMap(s.value(xid).ptr(), n, in_dim);
    }
    if (Tensor* gb = s.grad(bid)) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) (*gb)[o] += gm(r, o);
    }
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  const bool single = lv.rank() == 1;
  if (!single && lv.rank() != 2) throw ShapeError("logits must be [K] or [N,K]");
  const std::size_t n = single ? 1 : lv.dim(0);
  const std::size_t k = single ? lv.dim(0) : lv.dim(1);
  if (k < 2) throw ShapeError("cross entropy needs at least 2 classes");
  if (labels.size() != n) throw ShapeError("label count does not match batch size");
  Tensor probs(Shape{n, k});
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw DomainError("label " + std::to_string(labels[r]) + " out of range for " +
                        std::to_string(k) + " classes");
    }
    const double* row = lv.ptr() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - mx - log_z);
    loss -= row[labels[r]] - mx - log_z;
  }
  loss /= static_cast<double>(n);
  std::vector<int> targets(labels.begin(), labels.end());
  const NodeId lid = logits.id();
  return logits.tape().record(
      Tensor::scalar(loss), {logits},
      [lid, n, k, probs = std::move(probs), targets = std::move(targets)](const Tensor& g, GradSink& s) {
        Tensor* gl = s.grad(lid);
        const double scale = g[0] / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < k; ++j) {
            const double onehot = static_cast<int>(j) == targets[r] ? 1.0 : 0.0;
            (*gl)[r * k + j] += scale * (probs[r * k + j] - onehot);
          }
      });
}

void init_fan_in_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

Conv2D Conv2D::create(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                      std::size_t kernel, ConvGeometry geometry, Rng& rng) {
  Conv2D layer;
  layer.weight = {name + ".weight", Tensor(Shape{out_channels, in_channels, kernel, kernel})};
  layer.bias = {name + ".bias", Tensor(Shape{out_channels}, 0.0)};
  layer.geometry = geometry;
  init_fan_in_uniform(layer.weight.value, in_channels * kernel * kernel, rng);
  return layer;
}

Var Conv2D::forward(ParamBinder& bind, const Var& x) const {
  return conv2d(x, bind(weight), bind(bias), geometry);
}

Linear Linear::create(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Linear layer;
  layer.weight = {name + ".weight", Tensor(Shape{out, in})};
  layer.bias = {name + ".bias", Tensor(Shape{out}, 0.0)};
  init_fan_in_uniform(layer.weight.value, in, rng);
  return layer;
}

Var Linear::forward(ParamBinder& bind, const Var& x) const {
  return linear(x, bind(weight), bind(bias));
}

std::size_t parameter_count(std::span<Parameter* const> params) {
  std::size_t total = 0;
  for (const Parameter* p : params) total += p->value.numel();
  return total;
}

void adam_step(AdamState& state, std::span<Parameter* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.emplace_back(p->value.shape(), 0.0);
      state.v.emplace_back(p->value.shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.shape() != grads[i].shape() || state.m[i].shape() != grads[i].shape()) {
      throw ShapeError("adam: shape mismatch for " + params[i]->name);
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i]->value;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps_adam);
    }
  }
}

}  // namespace rectattn
