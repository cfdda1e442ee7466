#pragma once

#include <filesystem>
#include <string>

#include "piflow/mlp.hpp"

namespace piflow {

/// Model checkpoint: one little-endian binary blob of row-major doubles
/// plus a JSON manifest listing array names, shapes and byte offsets,
/// the training seed and the config hash.
void save_checkpoint(const std::filesystem::path& bin_path,
                     const std::filesystem::path& manifest_path, const ParamStore& store,
                     uint64_t seed, const std::string& config_hash);

/// Restores the store and checks names/shapes against the manifest.
/// Returns the recorded seed; config_hash_out may be null.
uint64_t load_checkpoint(const std::filesystem::path& bin_path,
                         const std::filesystem::path& manifest_path, ParamStore& store,
                         std::string* config_hash_out = nullptr);

/// FNV-1a hex digest of a string (config files are hashed verbatim).
std::string fnv1a_hex(const std::string& text);

/// CSV with a header row; '%.17g' cells so reads round-trip.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& rows);
Matrix read_csv(const std::filesystem::path& path, std::vector<std::string>* header = nullptr);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace piflow
