#include "rectattn/synthdata.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "rectattn/errors.hpp"

namespace rectattn {

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

SyntheticSample generate_sample(Rng& rng, std::size_t classes, std::size_t h, std::size_t w,
                                std::size_t channels) {
  if (classes < 2) throw DomainError("need at least 2 classes");
  if (h < 16 || w < 16) throw DomainError("images must be at least 16x16");
  if (channels != 1 && channels != 3) throw DomainError("channels must be 1 or 3");
  SyntheticSample s;
  s.label = uniform_int(rng, 0, static_cast<int>(classes) - 1);
  s.gt_rect.mu = {uniform(rng, 0.25, 0.75), uniform(rng, 0.25, 0.75)};
  s.gt_rect.sigma = {uniform(rng, 0.12, 0.3), uniform(rng, 0.12, 0.3)};
  // (-pi/2, pi/2]
  s.gt_rect.alpha = std::numbers::pi / 2.0 - uniform(rng, 0.0, std::numbers::pi);
  if (s.gt_rect.alpha <= -std::numbers::pi / 2.0) s.gt_rect.alpha = std::numbers::pi / 2.0;
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);

  const double theta = std::numbers::pi * static_cast<double>(s.label) / static_cast<double>(classes);
  const double period = std::max(4.0, static_cast<double>(std::min(h, w)) / 8.0);
  const double freq = 2.0 * std::numbers::pi / period;
  const BinaryMask support = gt_mask(s.gt_rect, h, w);

  s.image = Tensor(Shape{channels, h, w});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) s.image[(c * h + i) * w + j] = uniform(rng, 0.0, 0.4);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      if (support.at(i, j) != 1) continue;
      const double proj = static_cast<double>(i) * std::cos(theta) + static_cast<double>(j) * std::sin(theta);
      const double v = 0.5 + 0.5 * std::sin(freq * proj + phase);
      for (std::size_t c = 0; c < channels; ++c) s.image[(c * h + i) * w + j] = v;
    }
  return s;
}

Dataset generate_dataset(std::size_t classes, std::size_t channels, std::size_t h, std::size_t w,
                         std::size_t count, std::uint64_t seed) {
  if (count == 0) throw DomainError("dataset count must be positive");
  Dataset ds;
  ds.header.classes = static_cast<std::uint32_t>(classes);
  ds.header.channels = static_cast<std::uint32_t>(channels);
  ds.header.height = static_cast<std::uint32_t>(h);
  ds.header.width = static_cast<std::uint32_t>(w);
  ds.header.count = count;
  ds.header.seed = seed;
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = derive_stream(seed, i);
    ds.samples.push_back(generate_sample(rng, classes, h, w, channels));
  }
  return ds;
}

BinaryMask gt_mask(const RectParams& rect, std::size_t h, std::size_t w) {
  return binarize(render_map(rect, kGtSharpness, h, w), 0.5);
}

namespace {

constexpr char kMagic[4] = {'R', 'A', 'D', 'S'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (static_cast<std::size_t>(in.gcount()) != sizeof(T)) throw FormatError(std::string("truncated dataset: ") + what);
  return v;
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& ds) {
  const auto& hd = ds.header;
  const std::size_t pixels = static_cast<std::size_t>(hd.channels) * hd.height * hd.width;
  if (hd.count != ds.samples.size() || hd.count == 0) throw DomainError("header count does not match samples");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open dataset for writing: " + path);
  out.write(kMagic, 4);
  put(out, hd.version);
  put(out, hd.classes);
  put(out, hd.channels);
  put(out, hd.height);
  put(out, hd.width);
  put(out, hd.count);
  put(out, hd.seed);
  for (const auto& s : ds.samples) {
    if (s.image.numel() != pixels) throw ShapeError("sample image does not match header extents");
    put(out, static_cast<std::uint32_t>(s.label));
    out.write(reinterpret_cast<const char*>(s.image.ptr()), static_cast<std::streamsize>(pixels * sizeof(double)));
    const double rect[5] = {s.gt_rect.mu[0], s.gt_rect.mu[1], s.gt_rect.sigma[0], s.gt_rect.sigma[1],
                            s.gt_rect.alpha};
    out.write(reinterpret_cast<const char*>(rect), sizeof(rect));
  }
  if (!out) throw IoError("write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad dataset magic: " + path);
  Dataset ds;
  auto& hd = ds.header;
  hd.version = get<std::uint32_t>(in, "version");
  if (hd.version != 1) throw FormatError("unsupported dataset version " + std::to_string(hd.version));
  hd.classes = get<std::uint32_t>(in, "header");
  hd.channels = get<std::uint32_t>(in, "header");
  hd.height = get<std::uint32_t>(in, "header");
  hd.width = get<std::uint32_t>(in, "header");
  hd.count = get<std::uint64_t>(in, "header");
  hd.seed = get<std::uint64_t>(in, "header");
  if (hd.count == 0 || hd.classes < 2 || hd.channels == 0 || hd.height == 0 || hd.width == 0) {
    throw FormatError("invalid dataset header");
  }
  const std::size_t pixels = static_cast<std::size_t>(hd.channels) * hd.height * hd.width;
  // check the declared size against the file before allocating
  const auto header_end = in.tellg();
  in.seekg(0, std::ios::end);
  const auto file_end = in.tellg();
  in.seekg(header_end);
  const std::uint64_t record = 4 + (pixels + 5) * sizeof(double);
  const std::uint64_t payload = static_cast<std::uint64_t>(file_end - header_end);
  if (payload != hd.count * record) {
    throw FormatError("payload of " + std::to_string(payload) + " bytes does not match " +
                      std::to_string(hd.count) + " declared samples");
  }
  ds.samples.resize(hd.count);
  for (auto& s : ds.samples) {
    const auto label = get<std::uint32_t>(in, "label");
    if (label >= hd.classes) throw FormatError("label out of range");
    s.label = static_cast<int>(label);
    std::vector<double> data(pixels);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(pixels * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != pixels * sizeof(double)) throw FormatError("truncated image");
    s.image = Tensor(Shape{hd.channels, hd.height, hd.width}, std::move(data));
    double rect[5];
    in.read(reinterpret_cast<char*>(rect), sizeof(rect));
    if (in.gcount() != sizeof(rect)) throw FormatError("truncated rectangle");
    s.gt_rect = RectParams{{rect[0], rect[1]}, {rect[2], rect[3]}, rect[4]};
  }
  return ds;
}

}  // namespace rectattn
