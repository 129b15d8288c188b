#pragma once

#include <filesystem>
#include <string>

#include "t4c/model.hpp"

namespace t4c {

struct Checkpoint {
  ModelConfig config;
  NormStats norm;
  nd::ParamStore params;
};

/// Binary container: magic, version, JSON header (config + hash), then raw little-endian
/// float64 tensors (parameters, Adam moments, normalisation stats). Round-trips bit-exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Serialised bytes, as written by save_checkpoint.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>");

/// True when every parameter value, moment and stat matches bitwise.
bool bitwise_equal(const Checkpoint& a, const Checkpoint& b);

}  // namespace t4c
