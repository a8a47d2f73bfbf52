#include "rectattn/equivariance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rectattn/errors.hpp"

namespace rectattn {

void EquivarianceConfig::validate() const {
  if (!(lambda >= 0.0)) throw DomainError("equivariance lambda must be non-negative");
  if (alpha_range.lo > alpha_range.hi || sigma_range.lo > sigma_range.hi || mu_range.lo > mu_range.hi) {
    throw DomainError("transform range has lo > hi");
  }
  if (!(sigma_range.lo > 0.0)) throw DomainError("scale range must be positive");
}

TransformSpec sample_transform(Rng& rng, const EquivarianceConfig& cfg) {
  TransformSpec t;
  t.delta_alpha = uniform(rng, cfg.alpha_range.lo, cfg.alpha_range.hi);
  t.delta_sigma = uniform(rng, cfg.sigma_range.lo, cfg.sigma_range.hi);
  t.delta_mu[0] = uniform(rng, cfg.mu_range.lo, cfg.mu_range.hi);
  t.delta_mu[1] = uniform(rng, cfg.mu_range.lo, cfg.mu_range.hi);
  return t;
}

double wrap_angle(double a) {
  if (a > -std::numbers::pi && a <= std::numbers::pi) return a;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r <= 0.0) r += two_pi;
  return r - std::numbers::pi;
}

Vec2 transform_point(const TransformSpec& spec, Vec2 c, Vec2 t) {
  const Vec2 r = rotate_point(spec.delta_alpha, c, t);
  return {spec.delta_sigma * r[0] + spec.delta_mu[0], spec.delta_sigma * r[1] + spec.delta_mu[1]};
}

Vec2 inverse_transform_point(const TransformSpec& spec, Vec2 c, Vec2 t) {
  const Vec2 unscaled{(t[0] - spec.delta_mu[0]) / spec.delta_sigma, (t[1] - spec.delta_mu[1]) / spec.delta_sigma};
  return rotate_point(-spec.delta_alpha, c, unscaled);
}

Tensor warp_image(const Tensor& img, const TransformSpec& spec, Vec2 c) {
  if (img.rank() != 3 && img.rank() != 4) throw ShapeError("warp_image expects [C,H,W] or [N,C,H,W]");
  if (!(spec.delta_sigma > 0.0)) throw DomainError("delta_sigma must be positive");
  const std::size_t h = img.dim(img.rank() - 2), w = img.dim(img.rank() - 1);
  const std::size_t planes = img.numel() / (h * w);
  Tensor out(img.shape(), 0.0);
  const double hs = h > 1 ? static_cast<double>(h - 1) : 0.0;
  const double ws = w > 1 ? static_cast<double>(w - 1) : 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const Vec2 src = inverse_transform_point(spec, c, {pixel_coord(i, h), pixel_coord(j, w)});
      const double r = h > 1 ? src[0] * hs : (std::abs(src[0] - 0.5) < 1e-12 ? 0.0 : -2.0);
      const double q = w > 1 ? src[1] * ws : (std::abs(src[1] - 0.5) < 1e-12 ? 0.0 : -2.0);
      const double r0f = std::floor(r), q0f = std::floor(q);
      const double fr = r - r0f, fq = q - q0f;
      const long long r0 = static_cast<long long>(r0f), q0 = static_cast<long long>(q0f);
      const long long hi = static_cast<long long>(h), wi = static_cast<long long>(w);
      const long long rows[2] = {r0, r0 + 1};
      const long long cols[2] = {q0, q0 + 1};
      const double wr[2] = {1.0 - fr, fr};
      const double wq[2] = {1.0 - fq, fq};
      for (std::size_t p = 0; p < planes; ++p) {
        const double* plane = img.ptr() + p * h * w;
        double acc = 0.0;
        for (int a = 0; a < 2; ++a) {
          if (rows[a] < 0 || rows[a] >= hi || wr[a] == 0.0) continue;
          for (int b = 0; b < 2; ++b) {
            if (cols[b] < 0 || cols[b] >= wi || wq[b] == 0.0) continue;
            acc += wr[a] * wq[b] * plane[rows[a] * wi + cols[b]];
          }
        }
        out[p * h * w + i * w + j] = acc;
      }
    }
  }
  return out;
}

RectParams transform_params(const RectParams& p, const TransformSpec& spec, Vec2 c,
                            const RectAttentionConfig& bounds) {
  RectParams out;
  const Vec2 m = transform_point(spec, c, p.mu);
  for (int k = 0; k < 2; ++k) {
    out.mu[k] = std::clamp(m[k], 0.0, 1.0);
    out.sigma[k] = std::clamp(spec.delta_sigma * p.sigma[k], bounds.sigma_min, bounds.sigma_max);
  }
  out.alpha = wrap_angle(p.alpha + spec.delta_alpha);
  return out;
}

RectVars transform_params(const RectVars& p, const TransformSpec& spec, Vec2 c,
                          const RectAttentionConfig& bounds) {
  const double ca = std::cos(spec.delta_alpha), sa = std::sin(spec.delta_alpha);
  const double ds = spec.delta_sigma;
  const Var u = p.mu1 - c[0];
  const Var v = p.mu2 - c[1];
  RectVars out;
  out.mu1 = clamp(ds * (ca * u - sa * v + c[0]) + spec.delta_mu[0], 0.0, 1.0);
  out.mu2 = clamp(ds * (sa * u + ca * v + c[1]) + spec.delta_mu[1], 0.0, 1.0);
  out.sigma1 = clamp(ds * p.sigma1, bounds.sigma_min, bounds.sigma_max);
  out.sigma2 = clamp(ds * p.sigma2, bounds.sigma_min, bounds.sigma_max);
  out.alpha = wrap_angle(p.alpha + spec.delta_alpha);
  return out;
}

double equivariance_loss(const RectParams& a, const RectParams& b) {
  double total = 0.0;
  for (int k = 0; k < 2; ++k) {
    total += (a.mu[k] - b.mu[k]) * (a.mu[k] - b.mu[k]);
    total += (a.sigma[k] - b.sigma[k]) * (a.sigma[k] - b.sigma[k]);
  }
  const double da = wrap_angle(a.alpha - b.alpha);
  return total + da * da;
}

Var equivariance_loss(const RectVars& a, const RectVars& b) {
  if (a.batch() != b.batch()) throw ShapeError("equivariance_loss: batch sizes differ");
  const Var per_sample = square(a.mu1 - b.mu1) + square(a.mu2 - b.mu2) + square(a.sigma1 - b.sigma1) +
                         square(a.sigma2 - b.sigma2) + square(wrap_angle(a.alpha - b.alpha));
  return mean(per_sample);
}

Var combined_loss(const Var& l_main, const Var& l_eq, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("lambda must be non-negative");
  return l_main + l_eq * lambda;
}

std::string transform_spec_json(const TransformSpec& t) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "{\"delta_alpha\":%.17g,\"delta_sigma\":%.17g,\"delta_mu\":[%.17g,%.17g]}",
                t.delta_alpha, t.delta_sigma, t.delta_mu[0], t.delta_mu[1]);
  return buf;
}

}  // namespace rectattn
