#include "rectattn/rect_attention.hpp"

#include <cmath>
#include <numbers>

#include "rectattn/errors.hpp"

namespace rectattn {

namespace {

double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double canonical_angle(double a) { return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a; }

// Pixel coordinates as [1, H*W] tensors, rows first.
std::pair<Tensor, Tensor> coordinate_grids(std::size_t h, std::size_t w) {
  Tensor t1(Shape{1, h * w}), t2(Shape{1, h * w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      t1[i * w + j] = pixel_coord(i, h);
      t2[i * w + j] = pixel_coord(j, w);
    }
  return {std::move(t1), std::move(t2)};
}

}  // namespace

void RectAttentionConfig::validate() const {
  if (!(sharpness > 0.0)) throw DomainError("sharpness must be positive");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max <= 1.5)) {
    throw DomainError("need 0 < sigma_min < sigma_max <= 1.5");
  }
}

bool rect_params_valid(const RectParams& p, const RectAttentionConfig& cfg) {
  for (int k = 0; k < 2; ++k) {
    if (!(p.mu[k] >= 0.0 && p.mu[k] <= 1.0)) return false;
    if (!(p.sigma[k] >= cfg.sigma_min && p.sigma[k] <= cfg.sigma_max)) return false;
  }
  return p.alpha > -std::numbers::pi && p.alpha <= std::numbers::pi;
}

double window1d(double s, double t0, double sigma, double t) {
  if (!(sigma > 0.0)) throw DomainError("window sigma must be positive");
  if (!(s > 0.0)) throw DomainError("window sharpness must be positive");
  const double r = (t - t0) / sigma;
  return sigmoid_scalar(s * (1.0 - r * r));
}

double rect_window2d(double s, Vec2 mu, Vec2 sigma, Vec2 t) {
  return window1d(s, mu[0], sigma[0], t[0]) * window1d(s, mu[1], sigma[1], t[1]);
}

Vec2 rotate_point(double alpha, Vec2 mu, Vec2 t) {
  const double c = std::cos(alpha), sn = std::sin(alpha);
  const double u = t[0] - mu[0], v = t[1] - mu[1];
  return {c * u - sn * v + mu[0], sn * u + c * v + mu[1]};
}

double rect_window_rotated(double s, const RectParams& p, Vec2 t) {
  return rect_window2d(s, p.mu, p.sigma, rotate_point(-p.alpha, p.mu, t));
}

double pixel_coord(std::size_t index, std::size_t extent) {
  if (extent <= 1) return 0.5;
  return static_cast<double>(index) / static_cast<double>(extent - 1);
}

RectParams squash_raw_params(std::span<const double> raw, const RectAttentionConfig& cfg) {
  if (raw.size() != 5) throw ShapeError("expected 5 raw rectangle parameters");
  RectParams p;
  const double span = cfg.sigma_max - cfg.sigma_min;
  p.mu = {sigmoid_scalar(raw[0]), sigmoid_scalar(raw[1])};
  p.sigma = {cfg.sigma_min + span * sigmoid_scalar(raw[2]), cfg.sigma_min + span * sigmoid_scalar(raw[3])};
  p.alpha = canonical_angle(std::numbers::pi * std::tanh(raw[4]));
  return p;
}

RectParams RectVars::at(std::size_t n) const {
  RectParams p;
  p.mu = {mu1.value()[n], mu2.value()[n]};
  p.sigma = {sigma1.value()[n], sigma2.value()[n]};
  p.alpha = canonical_angle(alpha.value()[n]);
  return p;
}

RectVars squash_raw_params(const Var& raw, const RectAttentionConfig& cfg) {
  Var r = raw;
  if (r.value().rank() == 1) r = reshape(r, Shape{1, r.value().numel()});
  if (r.value().rank() != 2 || r.value().dim(1) != 5) {
    throw ShapeError("raw rectangle parameters must be [5] or [N,5], got " + shape_str(raw.shape()));
  }
  const double span = cfg.sigma_max - cfg.sigma_min;
  RectVars p;
  p.mu1 = sigmoid(select(r, 1, 0));
  p.mu2 = sigmoid(select(r, 1, 1));
  p.sigma1 = cfg.sigma_min + span * sigmoid(select(r, 1, 2));
  p.sigma2 = cfg.sigma_min + span * sigmoid(select(r, 1, 3));
  p.alpha = std::numbers::pi * tanh(select(r, 1, 4));
  return p;
}

RectVars constant_rect_vars(Tape& tape, std::span<const RectParams> params) {
  const std::size_t n = params.size();
  Tensor m1(Shape{n}), m2(Shape{n}), s1(Shape{n}), s2(Shape{n}), a(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    m1[i] = params[i].mu[0];
    m2[i] = params[i].mu[1];
    s1[i] = params[i].sigma[0];
    s2[i] = params[i].sigma[1];
    a[i] = params[i].alpha;
  }
  return {tape.constant(std::move(m1)), tape.constant(std::move(m2)), tape.constant(std::move(s1)),
          tape.constant(std::move(s2)), tape.constant(std::move(a))};
}

Tensor render_map(const RectParams& p, double s, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ShapeError("map extents must be positive");
  if (!(p.sigma[0] > 0.0 && p.sigma[1] > 0.0)) throw DomainError("window sigma must be positive");
  const double c = std::cos(p.alpha), sn = std::sin(p.alpha);
  Tensor f(Shape{h, w});
  for (std::size_t i = 0; i < h; ++i) {
    const double u = pixel_coord(i, h) - p.mu[0];
    for (std::size_t j = 0; j < w; ++j) {
      const double v = pixel_coord(j, w) - p.mu[1];
      const double r1 = (c * u + sn * v) / p.sigma[0];
      const double r2 = (c * v - sn * u) / p.sigma[1];
      f[i * w + j] = sigmoid_scalar(s * (1.0 - r1 * r1)) * sigmoid_scalar(s * (1.0 - r2 * r2));
    }
  }
  return f;
}

Var render_map(const RectVars& p, double s, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ShapeError("map extents must be positive");
  Tape& tape = p.mu1.tape();
  const std::size_t n = p.batch();
  auto [g1, g2] = coordinate_grids(h, w);
  const Var t1 = tape.constant(std::move(g1));
  const Var t2 = tape.constant(std::move(g2));
  auto col = [n](const Var& v) { return reshape(v, Shape{n, 1}); };
  const Var u = t1 - col(p.mu1);
  const Var v = t2 - col(p.mu2);
  const Var ca = col(cos(p.alpha));
  const Var sa = col(sin(p.alpha));
  const Var r1 = (ca * u + sa * v) / col(p.sigma1);
  const Var r2 = (ca * v - sa * u) / col(p.sigma2);
  const Var w1 = sigmoid(s * (1.0 - square(r1)));
  const Var w2 = sigmoid(s * (1.0 - square(r2)));
  return reshape(w1 * w2, Shape{n, h, w});
}

Tensor rescale_map(const Tensor& f) {
  if (f.rank() != 2 && f.rank() != 3) throw ShapeError("attention map must be [H,W] or [N,H,W]");
  const std::size_t hw = f.dim(f.rank() - 1) * f.dim(f.rank() - 2);
  const std::size_t n = f.numel() / hw;
  Tensor out = f;
  for (std::size_t b = 0; b < n; ++b) {
    double total = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      if (f[b * hw + i] < 0.0) throw DomainError("attention map has negative entries");
      total += f[b * hw + i];
    }
    if (!(total > kRescaleEps)) throw DomainError("degenerate attention map: sum <= 1e-8");
    for (std::size_t i = 0; i < hw; ++i) out[b * hw + i] = f[b * hw + i] * static_cast<double>(hw) / total;
  }
  return out;
}

Var rescale_map(const Var& f) {
  const Tensor& fv = f.value();
  if (fv.rank() != 2 && fv.rank() != 3) throw ShapeError("attention map must be [H,W] or [N,H,W]");
  const std::size_t hw = fv.dim(fv.rank() - 1) * fv.dim(fv.rank() - 2);
  const std::size_t n = fv.numel() / hw;
  const Var flat = reshape(f, Shape{n, hw});
  const Var total = sum_axis(flat, 1);
  for (std::size_t b = 0; b < n; ++b) {
    if (!(total.value()[b] > kRescaleEps)) throw DomainError("degenerate attention map: sum <= 1e-8");
  }
  const Var g = (flat * static_cast<double>(hw)) / reshape(total, Shape{n, 1});
  return reshape(g, fv.shape());
}

namespace {

Shape attention_broadcast_shape(const Shape& x, const Shape& f) {
  const bool batched = x.size() == 4;
  if (!(x.size() == 3 || batched) || f.size() != x.size() - 1) {
    throw ShapeError("apply_attention expects x [C,H,W] with f [H,W] or x [N,C,H,W] with f [N,H,W]");
  }
  const std::size_t h = x[x.size() - 2], w = x[x.size() - 1];
  if (f[f.size() - 2] != h || f[f.size() - 1] != w || (batched && f[0] != x[0])) {
    throw ShapeError("attention map " + shape_str(f) + " does not match features " + shape_str(x));
  }
  return batched ? Shape{x[0], 1, h, w} : Shape{1, h, w};
}

}  // namespace

Var apply_attention(const Var& x, const Var& f, const RectAttentionConfig& cfg) {
  const Shape gshape = attention_broadcast_shape(x.shape(), f.shape());
  const Var g = reshape(cfg.use_rescale ? rescale_map(f) : f, gshape);
  return cfg.use_residual ? x + g * x : g * x;
}

Tensor apply_attention(const Tensor& x, const Tensor& f, const RectAttentionConfig& cfg) {
  attention_broadcast_shape(x.shape(), f.shape());
  const Tensor g = cfg.use_rescale ? rescale_map(f) : f;
  const std::size_t hw = x.dim(x.rank() - 1) * x.dim(x.rank() - 2);
  const std::size_t c = x.dim(x.rank() - 3);
  Tensor out = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t b = i / (c * hw);
    const double gi = g[b * hw + i % hw];
    out[i] = cfg.use_residual ? x[i] + gi * x[i] : gi * x[i];
  }
  return out;
}

PredictorNet PredictorNet::create(const std::string& name, std::size_t in_channels, Rng& rng,
                                  std::array<std::size_t, 3> widths) {
  PredictorNet net;
  const ConvGeometry same{1, 1, 1};
  std::size_t in = in_channels;
  for (std::size_t k = 0; k < 3; ++k) {
    net.convs_[k] = Conv2D::create(name + ".conv" + std::to_string(k + 1), in, widths[k], 3, same, rng);
    in = widths[k];
  }
  net.head_ = Linear::create(name + ".head", in, 5, rng);
  net.head_.weight.value = Tensor(net.head_.weight.value.shape(), 0.0);
  return net;
}

Var PredictorNet::forward_raw(ParamBinder& bind, const Var& x) const {
  Var h = maxpool2d(relu(convs_[0].forward(bind, x)), 2);
  h = maxpool2d(relu(convs_[1].forward(bind, h)), 2);
  h = relu(convs_[2].forward(bind, h));
  return head_.forward(bind, global_avg_pool(h));
}

std::vector<Parameter*> PredictorNet::parameters() {
  std::vector<Parameter*> out;
  for (auto& c : convs_)
    for (Parameter* p : c.parameters()) out.push_back(p);
  for (Parameter* p : head_.parameters()) out.push_back(p);
  return out;
}

std::size_t PredictorNet::multiply_accumulates(std::size_t h, std::size_t w) const {
  std::size_t total = 0;
  std::size_t pixels = h * w;
  for (std::size_t k = 0; k < 3; ++k) {
    total += convs_[k].in_channels() * 9 * convs_[k].out_channels() * pixels;
    if (k < 2) pixels /= 4;
  }
  return total + head_.weight.value.numel();
}

RectVars predict_params(const PredictorNet& net, ParamBinder& bind, const Var& x,
                        const RectAttentionConfig& cfg) {
  const std::size_t channel_axis = x.value().rank() == 4 ? 1 : 0;
  if (x.value().rank() < 3 || x.value().dim(channel_axis) != net.in_channels()) {
    throw ShapeError("predictor expects " + std::to_string(net.in_channels()) + " channels, got " +
                     shape_str(x.shape()));
  }
  return squash_raw_params(net.forward_raw(bind, x), cfg);
}

}  // namespace rectattn
