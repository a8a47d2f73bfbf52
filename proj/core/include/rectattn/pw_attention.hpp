#pragma once

#include <array>
#include <string>
#include <vector>

#include "rectattn/autodiff.hpp"
#include "rectattn/nn.hpp"

namespace rectattn {

/// Position-wise baseline: 1x1 reduction to 80 channels, two dilated 3x3
/// convs (dilation 4, padding 4) and a dilated 3x3 head to one channel,
/// followed by a sigmoid. Spatial size is preserved throughout.
class PWModule {
 public:
  static constexpr std::size_t kWidth = 80;

  PWModule() = default;
  static PWModule create(const std::string& name, std::size_t in_channels, Rng& rng,
                         std::size_t width = kWidth);

  /// x [C,H,W] -> [H,W] or [N,C,H,W] -> [N,H,W], entries in (0,1).
  Var forward(ParamBinder& bind, const Var& x) const;
  std::vector<Parameter*> parameters();
  std::size_t in_channels() const { return layers_[0].in_channels(); }
  std::size_t multiply_accumulates(std::size_t h, std::size_t w) const;

 private:
  std::array<Conv2D, 4> layers_;
};

/// x + f*x with f broadcast across channels (no rescaling).
Var pw_apply(const Var& x, const Var& f);

}  // namespace rectattn
