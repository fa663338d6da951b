#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "deskmvs/numerics/tape.hpp"

namespace deskmvs {

// Record layout (all little-endian):
//   u8 dtype code (1 = f32, 2 = f64), u8 rank, rank x i64 extents,
//   numel values of the dtype's width.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

// Checkpoint: "DMVSCKPT" magic, u32 count, then per entry
// u32 name length, name bytes, tensor record.
void save_checkpoint(const std::filesystem::path& path, const ParamList& params);
std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path);
// Overwrites every param by name; missing names or shape mismatches throw.
void load_checkpoint(const std::filesystem::path& path, const ParamList& params);

}  // namespace deskmvs
