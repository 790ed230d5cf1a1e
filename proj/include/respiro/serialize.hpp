#pragma once

#include <string>
#include <vector>

#include "respiro/module.hpp"
#include "respiro/tensor.hpp"

// Binary tensor containers, little-endian.
//
//   RCK1 (checkpoint): magic "RCK1", u32 count, then per entry:
//     u16 name length, name bytes, u8 rank, u32 extents[rank], f32 payload.
//   RSF1 (tensor cache): magic "RSF1", u32 count, then per entry:
//     u8 rank, u32 extents[rank], f32 payload.
//
// Writers stage to a temp file in the same directory and rename over the
// target, so readers never observe a partial file.

namespace respiro::core {

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params);
std::vector<Parameter> load_checkpoint(const std::string& path);

// Copies stored values into same-named, same-shaped parameters already
// registered; every stored name must resolve, and every registered parameter
// must be covered.
void load_checkpoint_into(const std::string& path, ParamRegistry& registry);

void save_tensors(const std::string& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_tensors(const std::string& path);

}  // namespace respiro::core
