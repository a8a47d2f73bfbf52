#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rectattn/autodiff.hpp"
#include "rectattn/random.hpp"
#include "rectattn/tensor.hpp"

namespace rectattn {

struct Parameter {
  std::string name;
  Tensor value;
};

/// Binds persistent parameters to leaves of one tape. Each parameter becomes a
/// single leaf no matter how often it is used during the step.
class ParamBinder {
 public:
  /// With `trainable == false` parameters are bound as constants (inference).
  explicit ParamBinder(Tape& tape, bool trainable = true) : tape_(tape), trainable_(trainable) {}

  Var operator()(const Parameter& p);
  Tape& tape() const { return tape_; }

  /// Gradient for `p`; zeros when `p` was not used in this step.
  Tensor gradient(const Gradients& grads, const Parameter& p) const;
  std::vector<Tensor> gradients(const Gradients& grads, std::span<Parameter* const> params) const;

 private:
  Tape& tape_;
  bool trainable_;
  std::unordered_map<const Parameter*, Var> bound_;
};

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
};

/// floor((in + 2p - d(k-1) - 1)/s) + 1; throws ShapeError when not positive.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& geo);

/// Cross-correlation (no kernel flip). x is [C,H,W] or [N,C,H,W], weight
/// [O,C,kh,kw], bias [O] or an unbound Var for no bias.
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& geo);
/// Non-overlapping k x k max pooling. Extents must be divisible by k; ties
/// route the gradient to the first maximal element in row-major order.
Var maxpool2d(const Var& x, std::size_t k);
/// Spatial mean: [C,H,W] -> [C], [N,C,H,W] -> [N,C].
Var global_avg_pool(const Var& x);
/// x [in] or [N,in], w [out,in], b [out].
Var linear(const Var& x, const Var& w, const Var& b);
/// Mean over the batch of -log softmax(logits)[label]. logits [K] or [N,K].
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// Uniform in [-sqrt(1/fan_in), sqrt(1/fan_in)].
void init_fan_in_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

struct Conv2D {
  Parameter weight;  // [out, in, k, k]
  Parameter bias;    // [out]
  ConvGeometry geometry;

  static Conv2D create(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                       std::size_t kernel, ConvGeometry geometry, Rng& rng);

  Var forward(ParamBinder& bind, const Var& x) const;
  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

struct Linear {
  Parameter weight;  // [out, in]
  Parameter bias;    // [out]

  static Linear create(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  Var forward(ParamBinder& bind, const Var& x) const;
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

std::size_t parameter_count(std::span<Parameter* const> params);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step_count = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
};

/// One bias-corrected Adam update. Moments are zero-initialized on the first
/// call; later calls must pass the same parameter list.
void adam_step(AdamState& state, std::span<Parameter* const> params, std::span<const Tensor> grads);

}  // namespace rectattn
