#pragma once

#include <string>

#include "hivec/heads.hpp"
#include "hivec/network.hpp"

namespace hivec {

// HVMC model container: magic "HVMC", u32 format version, then each tensor as
// (u32 name length, name bytes, u32 rows, u32 cols, f64 payload).
// Little-endian; round trips are bit-exact. Encoder tensors are named
// "layer.{i}.{field}", heads "head.{i}".
void save_checkpoint(const EncoderParams& encoder, const HeadSet& heads, const std::string& path);

std::pair<EncoderParams, HeadSet> load_checkpoint(const std::string& path);

}  // namespace hivec
