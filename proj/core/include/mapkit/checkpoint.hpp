#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mapkit/nn.hpp"

namespace mapkit {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
};

/// Parameter snapshot plus a free-form header (a JSON config echo).
///
/// Binary layout, little-endian: "MAPKITCK", u32 version, u64 header length,
/// header bytes, u64 entry count, then per entry u32 name length, name,
/// u32 rank, u64 dims[rank], f64 values[numel].
struct Checkpoint {
  std::string header;
  std::vector<std::pair<std::string, StoredTensor>> entries;

  const StoredTensor* find(const std::string& name) const;
};

Checkpoint snapshot(const nn::ParameterSet& params, std::string header);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
void save_checkpoint(const std::filesystem::path& path, const nn::ParameterSet& params, const std::string& header);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies values for every parameter in `target` from entries named
/// `source_prefix + name`. Missing entries and shape mismatches throw
/// CheckpointError naming the parameter.
void load_parameters(const Checkpoint& ckpt, const nn::ParameterSet& target, const std::string& source_prefix = "");

/// FNV-1a 64 over the parameter names, shapes and raw value bytes.
std::uint64_t parameter_hash(const nn::ParameterSet& params);

}  // namespace mapkit
