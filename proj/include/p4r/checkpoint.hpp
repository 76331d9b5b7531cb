#pragma once

// Model checkpoints: `P4RC` magic, u32 version, u64 header length, a JSON
// header (config, shapes, seed, dataset manifest hash), then float32
// little-endian row-major blocks E_u, E_i, W, b.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "p4r/model.hpp"

namespace p4r {

struct Checkpoint {
  ModelParams<float> params;
  std::uint64_t seed = 0;
  std::string manifest_hash;
};

void save_checkpoint(const Checkpoint& ckpt, std::ostream& out);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Rejects the file when `expected_manifest_hash` is given and differs.
Checkpoint load_checkpoint(std::istream& in,
                           const std::optional<std::string>& expected_manifest_hash = std::nullopt);
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_manifest_hash = std::nullopt);

const char* inject_name(Inject inject);
const char* readout_name(Readout readout);
Inject parse_inject(const std::string& name);
Readout parse_readout(const std::string& name);

}  // namespace p4r
