#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rectattn/random.hpp"
#include "rectattn/rect_attention.hpp"
#include "rectattn/tensor.hpp"
#include "rectattn/theory.hpp"

namespace rectattn {

struct SyntheticSample {
  Tensor image;  // [C,H,W], values in [0,1]
  int label = 0;
  RectParams gt_rect;

  bool operator==(const SyntheticSample&) const = default;
};

struct DatasetHeader {
  std::uint32_t version = 1;
  std::uint32_t classes = 4;
  std::uint32_t channels = 1;
  std::uint32_t height = 48;
  std::uint32_t width = 48;
  std::uint64_t count = 0;
  std::uint64_t seed = 0;

  bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<SyntheticSample> samples;
};

inline constexpr double kGtSharpness = 50.0;

/// Uniform noise in [0, 0.4] with a striped patch (orientation k*pi/K for
/// class k, random phase) filling a random rotated rectangle.
SyntheticSample generate_sample(Rng& rng, std::size_t classes, std::size_t h, std::size_t w,
                                std::size_t channels = 1);
/// Sample i is drawn from stream i of `seed`.
Dataset generate_dataset(std::size_t classes, std::size_t channels, std::size_t h, std::size_t w,
                         std::size_t count, std::uint64_t seed);

/// binarize(render_map(rect, s = 50)).
BinaryMask gt_mask(const RectParams& rect, std::size_t h, std::size_t w);

// Layout (little-endian):
//   "RADS" u32 version u32 K u32 C u32 H u32 W u64 count u64 seed
//   count x { u32 label, f64 image[C*H*W], f64 rect[5] = mu1 mu2 sigma1 sigma2 alpha }
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

}  // namespace rectattn
