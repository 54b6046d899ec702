#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cme/data_core.hpp"

namespace cme {

inline constexpr int kBundleVersion = 1;

/// Writes manifest.json plus one little-endian row-major blob per array.
void save_bundle(const ActivationBundle& bundle, const std::filesystem::path& dir);

/// Reads and validates a bundle directory. Throws FormatError on size, CRC or schema problems.
ActivationBundle load_bundle(const std::filesystem::path& dir);

uint32_t crc32_of(std::span<const unsigned char> bytes);

// Raw blob helpers shared with the model checkpoint formats. Writers return the
// CRC32 of the bytes written; readers check the byte count and (when given) the CRC.
uint32_t write_f32_blob(const std::filesystem::path& file, std::span<const float> values);
uint32_t write_i32_blob(const std::filesystem::path& file, std::span<const int32_t> values);
std::vector<float> read_f32_blob(const std::filesystem::path& file, std::size_t expected_count,
                                 std::optional<uint32_t> expected_crc);
std::vector<int32_t> read_i32_blob(const std::filesystem::path& file, std::size_t expected_count,
                                   std::optional<uint32_t> expected_crc);

}  // namespace cme
