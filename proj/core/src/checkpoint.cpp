#include "rectattn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "rectattn/errors.hpp"

namespace rectattn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', 'A', 'T', 'N'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<std::size_t>(in.gcount()) == sizeof(T);
}

}  // namespace

void save_checkpoint(const std::string& path, std::span<Parameter* const> params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  for (const Parameter* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t e : p->value.shape()) put<std::uint64_t>(out, e);
    out.write(reinterpret_cast<const char*>(p->value.ptr()),
              static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<Parameter> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic: " + path);
  std::uint32_t version = 0;
  if (!get(in, version)) throw FormatError("truncated checkpoint header");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<Parameter> params;
  std::uint32_t name_len = 0;
  while (get(in, name_len)) {
    if (name_len > 4096) throw FormatError("implausible parameter name length");
    Parameter p;
    p.name.resize(name_len);
    in.read(p.name.data(), name_len);
    std::uint32_t rank = 0;
    if (static_cast<std::uint32_t>(in.gcount()) != name_len || !get(in, rank) || rank > 8) {
      throw FormatError("truncated checkpoint record");
    }
    Shape shape(rank);
    for (auto& e : shape) {
      std::uint64_t v = 0;
      if (!get(in, v) || v == 0) throw FormatError("bad extent in record " + p.name);
      e = v;
    }
    std::vector<double> data(shape_numel(shape));
    const auto bytes = static_cast<std::streamsize>(data.size() * sizeof(double));
    in.read(reinterpret_cast<char*>(data.data()), bytes);
    if (in.gcount() != bytes) throw FormatError("truncated data for " + p.name);
    p.value = Tensor(std::move(shape), std::move(data));
    params.push_back(std::move(p));
  }
  if (in.gcount() != 0) throw FormatError("trailing bytes in checkpoint");
  return params;
}

void load_checkpoint(const std::string& path, std::span<Parameter* const> params) {
  std::unordered_map<std::string, Parameter> stored;
  for (auto& p : read_checkpoint(path)) stored.emplace(p.name, std::move(p));
  for (Parameter* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw ShapeError("checkpoint lacks parameter " + p->name);
    if (it->second.value.shape() != p->value.shape()) {
      throw ShapeError("shape mismatch for " + p->name + ": stored " + shape_str(it->second.value.shape()) +
                       ", expected " + shape_str(p->value.shape()));
    }
    p->value = it->second.value;
  }
}

}  // namespace rectattn
