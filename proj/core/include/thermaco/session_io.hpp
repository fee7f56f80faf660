#pragma once

// On-disk session directory:
//   manifest.json  structured manifest (ids, rates, shape, schedule, file names)
//   frames.bin     16-byte header + little-endian float32 frames, row-major
//   mask.bin       16-byte header + uint8 body masks
//   parts.bin      16-byte header + uint8 part labels
//   eda.csv        "time_s,value" rows
// Header: magic "THW1", then height, width, frame count as little-endian u32.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "thermaco/datamodel.hpp"

namespace thermaco {

inline constexpr char kFrameMagic[4] = {'T', 'H', 'W', '1'};
inline constexpr std::size_t kFrameHeaderBytes = 16;

struct GridFileHeader {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t count = 0;
};

void write_float_grids(const std::filesystem::path& path, const GridFileHeader& header, std::span<const float> values);
void write_byte_grids(const std::filesystem::path& path, const GridFileHeader& header,
                      std::span<const std::uint8_t> values);

/// Reads a grid file, checking the magic and that the payload holds exactly
/// header.count grids.
std::vector<float> read_float_grids(const std::filesystem::path& path, GridFileHeader& header);
std::vector<std::uint8_t> read_byte_grids(const std::filesystem::path& path, GridFileHeader& header);

/// Validates the record, then writes it into directory (created if needed).
/// Returns the manifest path. Output bytes are a pure function of the record.
std::filesystem::path write_session(const SessionRecord& session, const std::filesystem::path& directory);

SessionRecord read_session(const std::filesystem::path& directory);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace thermaco
