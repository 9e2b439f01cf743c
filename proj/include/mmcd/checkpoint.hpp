#pragma once

#include <string>
#include <vector>

#include "mmcd/param.hpp"

namespace mmcd {

// Archive layout: 8-byte magic, u32 version, u64 header length, JSON header
// (config hash + leaf directory sorted by name), then float32 little-endian
// payload. Loading stages the whole file and verifies hash, names, shapes and
// flags before touching any parameter.
void save_checkpoint(const std::string& path, const std::string& config_hash,
                     const std::vector<Parameter*>& leaves);

void load_checkpoint(const std::string& path, const std::string& expected_hash,
                     const std::vector<Parameter*>& leaves);

std::string read_checkpoint_hash(const std::string& path);

// SHA-256 over the float32 bytes of every frozen non-buffer leaf, in name
// order. Used to prove freeze invariance across training.
std::string frozen_digest(const std::vector<Parameter*>& leaves);

}  // namespace mmcd
