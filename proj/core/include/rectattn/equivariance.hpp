#pragma once

#include <numbers>
#include <string>

#include "rectattn/autodiff.hpp"
#include "rectattn/random.hpp"
#include "rectattn/rect_attention.hpp"

namespace rectattn {

/// Rotation by delta_alpha about the center, isotropic scaling by
/// delta_sigma and translation by delta_mu (normalized units).
struct TransformSpec {
  double delta_alpha = 0.0;
  double delta_sigma = 1.0;
  Vec2 delta_mu{0.0, 0.0};

  bool operator==(const TransformSpec&) const = default;
};

struct Interval {
  double lo;
  double hi;
};

struct EquivarianceConfig {
  Vec2 center{0.5, 0.5};
  double lambda = 0.1;
  Interval alpha_range{-std::numbers::pi / 4.0, std::numbers::pi / 4.0};
  Interval sigma_range{0.8, 1.25};
  Interval mu_range{-0.2, 0.2};  // applied to both components

  void validate() const;
};

/// Draws delta_alpha, delta_sigma, delta_mu[0], delta_mu[1] in that order.
TransformSpec sample_transform(Rng& rng, const EquivarianceConfig& cfg);

/// Point map of the transform: delta_sigma * (R(t - c) + c) + delta_mu.
Vec2 transform_point(const TransformSpec& spec, Vec2 c, Vec2 t);
Vec2 inverse_transform_point(const TransformSpec& spec, Vec2 c, Vec2 t);

/// Resamples [C,H,W] or [N,C,H,W] images through the inverse point map with
/// bilinear interpolation; samples falling outside the frame read as zero.
Tensor warp_image(const Tensor& img, const TransformSpec& spec, Vec2 c);

/// The rectangle seen through the transform, clamped to the valid ranges of `bounds`.
RectParams transform_params(const RectParams& p, const TransformSpec& spec, Vec2 c,
                            const RectAttentionConfig& bounds);
RectVars transform_params(const RectVars& p, const TransformSpec& spec, Vec2 c,
                          const RectAttentionConfig& bounds);

/// Squared distance over (mu, sigma) plus the squared wrapped angle difference.
double equivariance_loss(const RectParams& a, const RectParams& b);
/// Batch mean of the per-sample loss above.
Var equivariance_loss(const RectVars& a, const RectVars& b);

/// l_main + lambda * l_eq; lambda must be non-negative.
Var combined_loss(const Var& l_main, const Var& l_eq, double lambda);

/// Maps an angle to (-pi, pi].
double wrap_angle(double a);

/// {"delta_alpha":..,"delta_sigma":..,"delta_mu":[..,..]}
std::string transform_spec_json(const TransformSpec& t);

}  // namespace rectattn
