#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "afford3d/metrics.hpp"
#include "afford3d/trainer.hpp"

namespace afford3d {

/// Everything a run depends on. Serialized as JSON; the hash of the
/// canonical serialization is stamped into every output file.
struct RunConfig {
  train::TrainConfig train;
  metrics::Protocol protocol;
  std::string manifest;

  void validate() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig parse_run_config(const std::string& json_text, const std::string& origin = "<memory>");
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json_text(const RunConfig& config);
std::uint64_t config_hash(const RunConfig& config);
std::string hash_hex(std::uint64_t hash);

}  // namespace afford3d
