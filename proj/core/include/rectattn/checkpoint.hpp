#pragma once

#include <span>
#include <string>
#include <vector>

#include "rectattn/nn.hpp"

namespace rectattn {

// Layout (all integers and floats little-endian):
//   "RATN"  u32 version
//   repeated until EOF:
//     u32 name_len, name bytes, u32 rank, u64 extents[rank], f64 data[numel]
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, std::span<Parameter* const> params);
std::vector<Parameter> read_checkpoint(const std::string& path);
/// Copies stored values into `params`. Every parameter must be present with
/// the same shape; throws ShapeError otherwise.
void load_checkpoint(const std::string& path, std::span<Parameter* const> params);

}  // namespace rectattn
