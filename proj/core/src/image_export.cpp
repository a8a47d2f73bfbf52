#include "rectattn/image_export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "rectattn/errors.hpp"

namespace rectattn {

unsigned char to_byte(double v) {
  const double scaled = std::floor(255.0 * v + 0.5);
  if (!(scaled >= 0.0)) return 0;
  if (scaled >= 255.0) return 255;
  return static_cast<unsigned char>(scaled);
}

namespace {

void write_netpbm(const std::string& path, const char* magic, std::size_t h, std::size_t w,
                  const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open image for writing: " + path);
  out << magic << '\n' << w << ' ' << h << '\n' << 255 << '\n';
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

void write_pgm(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("PGM export expects an [H,W] map");
  std::vector<unsigned char> bytes(map.numel());
  for (std::size_t k = 0; k < bytes.size(); ++k) bytes[k] = to_byte(map[k]);
  write_netpbm(path, "P5", map.dim(0), map.dim(1), bytes);
}

void write_overlay_ppm(const std::string& path, const Tensor& image, const Tensor& map) {
  if (image.rank() != 3 || map.rank() != 2) throw ShapeError("overlay expects image [C,H,W] and map [h,w]");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t mh = map.dim(0), mw = map.dim(1);
  std::vector<unsigned char> bytes(h * w * 3);
  for (std::size_t i = 0; i < h; ++i) {
    const auto mi = static_cast<std::size_t>(std::lround(pixel_coord(i, h) * static_cast<double>(mh - 1)));
    for (std::size_t j = 0; j < w; ++j) {
      const auto mj = static_cast<std::size_t>(std::lround(pixel_coord(j, w) * static_cast<double>(mw - 1)));
      double gray = 0.0;
      for (std::size_t k = 0; k < c; ++k) gray += image[(k * h + i) * w + j];
      gray /= static_cast<double>(c);
      const double a = std::clamp(map[mi * mw + mj], 0.0, 1.0);
      const double base = (1.0 - a) * gray;
      bytes[(i * w + j) * 3 + 0] = to_byte(base + a);
      bytes[(i * w + j) * 3 + 1] = to_byte(base);
      bytes[(i * w + j) * 3 + 2] = to_byte(base);
    }
  }
  write_netpbm(path, "P6", h, w, bytes);
}

std::string rect_params_json(const RectParams& p) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "{\"mu1\":%.17g,\"mu2\":%.17g,\"sigma1\":%.17g,\"sigma2\":%.17g,\"alpha\":%.17g}",
                p.mu[0], p.mu[1], p.sigma[0], p.sigma[1], p.alpha);
  return buf;
}

}  // namespace rectattn
