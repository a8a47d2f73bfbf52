#pragma once

#include <array>
#include <span>
#include <vector>

#include "rectattn/autodiff.hpp"
#include "rectattn/nn.hpp"
#include "rectattn/tensor.hpp"

namespace rectattn {

using Vec2 = std::array<double, 2>;

/// Rotated rectangle in normalized coordinates. mu is the center (row, col),
/// sigma the half-height and half-width, alpha the orientation in radians.
struct RectParams {
  Vec2 mu{0.5, 0.5};
  Vec2 sigma{0.5, 0.5};
  double alpha = 0.0;

  bool operator==(const RectParams&) const = default;
};

struct RectAttentionConfig {
  double sharpness = 6.0;
  double sigma_min = 0.05;
  double sigma_max = 1.0;
  bool use_rescale = true;
  bool use_residual = true;

  /// Throws DomainError unless s > 0 and 0 < sigma_min < sigma_max <= 1.5.
  void validate() const;
};

/// True when mu in [0,1]^2, sigma within [sigma_min, sigma_max] and alpha in (-pi, pi].
bool rect_params_valid(const RectParams& p, const RectAttentionConfig& cfg);

double window1d(double s, double t0, double sigma, double t);
double rect_window2d(double s, Vec2 mu, Vec2 sigma, Vec2 t);
/// R_alpha (t - mu) + mu.
Vec2 rotate_point(double alpha, Vec2 mu, Vec2 t);
/// The axis-aligned window evaluated at rotate_point(-alpha, mu, t).
double rect_window_rotated(double s, const RectParams& p, Vec2 t);

/// Normalized coordinate of pixel `index` along an axis of `extent` pixels:
/// index/(extent-1), or 0.5 when extent == 1.
double pixel_coord(std::size_t index, std::size_t extent);

RectParams squash_raw_params(std::span<const double> raw, const RectAttentionConfig& cfg);

/// Batched rectangle parameters on a tape, each of shape [N].
struct RectVars {
  Var mu1, mu2, sigma1, sigma2, alpha;

  std::size_t batch() const { return mu1.value().numel(); }
  RectParams at(std::size_t n) const;
};

/// raw is [5] or [N,5]; the result is always batched ([1] for a single row).
RectVars squash_raw_params(const Var& raw, const RectAttentionConfig& cfg);
/// Puts fixed parameters on the tape as constants.
RectVars constant_rect_vars(Tape& tape, std::span<const RectParams> params);

/// Rendered attention map [H,W].
Tensor render_map(const RectParams& p, double s, std::size_t h, std::size_t w);
/// Differentiable rendering, [N,H,W].
Var render_map(const RectVars& p, double s, std::size_t h, std::size_t w);

inline constexpr double kRescaleEps = 1e-8;

/// f * HW / sum(f) per map. f is [H,W] or [N,H,W]; DomainError when a sum is <= 1e-8.
Tensor rescale_map(const Tensor& f);
Var rescale_map(const Var& f);

/// x [C,H,W] with f [H,W], or x [N,C,H,W] with f [N,H,W].
/// Residual mode: x + g*x, otherwise g*x, with g = rescale(f) if enabled.
Var apply_attention(const Var& x, const Var& f, const RectAttentionConfig& cfg);
Tensor apply_attention(const Tensor& x, const Tensor& f, const RectAttentionConfig& cfg);

/// Sub-sampling parameter predictor: three 3x3 convs (pooling after the first
/// two), global average pooling and a linear head to 5 raw outputs.
class PredictorNet {
 public:
  static constexpr std::array<std::size_t, 3> kDefaultWidths{64, 128, 256};

  PredictorNet() = default;
  /// The linear head starts at zero so the initial rectangle is centered.
  static PredictorNet create(const std::string& name, std::size_t in_channels, Rng& rng,
                             std::array<std::size_t, 3> widths = kDefaultWidths);

  /// Raw outputs [N,5] (or [5] for an unbatched input).
  Var forward_raw(ParamBinder& bind, const Var& x) const;
  std::vector<Parameter*> parameters();
  std::size_t in_channels() const { return convs_[0].in_channels(); }
  /// Multiply-accumulates for one forward pass over an h x w input.
  std::size_t multiply_accumulates(std::size_t h, std::size_t w) const;

  Linear& head() { return head_; }

 private:
  std::array<Conv2D, 3> convs_;
  Linear head_;
};

RectVars predict_params(const PredictorNet& net, ParamBinder& bind, const Var& x,
                        const RectAttentionConfig& cfg);

}  // namespace rectattn
