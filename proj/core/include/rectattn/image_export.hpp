#pragma once

#include <string>

#include "rectattn/rect_attention.hpp"
#include "rectattn/tensor.hpp"

namespace rectattn {

/// 8-bit value of v in [0,1]: floor(255 v + 0.5), clamped.
unsigned char to_byte(double v);

/// Binary PGM (P5, maxval 255) of an [H,W] map.
void write_pgm(const std::string& path, const Tensor& map);
/// Binary PPM (P6) of the grayscale image [C,H,W] with the map as red-channel
/// alpha. The map is resampled (nearest, in normalized coordinates) to H x W.
void write_overlay_ppm(const std::string& path, const Tensor& image, const Tensor& map);
/// {"mu1":..,"mu2":..,"sigma1":..,"sigma2":..,"alpha":..}
std::string rect_params_json(const RectParams& p);

}  // namespace rectattn
