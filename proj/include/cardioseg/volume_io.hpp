#pragma once

// Binary volume and mask files. Header, little-endian:
//
//   char[4]  magic: "CVOL" (float volume), "CMSK" (binary mask),
//            "CPRB" (probability mask)
//   u32      version (1)
//   u32 x 3  dims nx, ny, nz
//   f32 x 3  spacing in mm
//   u32      base_index
//   u32 x 6  crop box lo x,y,z then hi x,y,z; all 0xFFFFFFFF when absent
//
// Payload, x-fastest: f32 per voxel for CVOL/CPRB, u8 in {0,1} for CMSK.

#include <filesystem>
#include <string>

#include "cardioseg/checkpoint.hpp"
#include "cardioseg/volume.hpp"

namespace cardioseg {

inline constexpr std::uint32_t kVolumeFormatVersion = 1;
inline constexpr std::uint32_t kNoCropBox = 0xFFFFFFFFu;

std::string serialize_volume(const Volume& v);
std::string serialize_mask(const BinaryMask3D& m);
std::string serialize_probability(const ProbabilityMask3D& p);

/// Throw FormatError on wrong magic or version, truncation, trailing bytes,
/// non-binary CMSK payloads or header values that fail Grid::validate.
Volume deserialize_volume(const std::string& bytes);
BinaryMask3D deserialize_mask(const std::string& bytes);
ProbabilityMask3D deserialize_probability(const std::string& bytes);

void write_volume(const Volume& v, const std::filesystem::path& path);
void write_mask(const BinaryMask3D& m, const std::filesystem::path& path);
void write_probability(const ProbabilityMask3D& p, const std::filesystem::path& path);

Volume read_volume(const std::filesystem::path& path);
BinaryMask3D read_mask(const std::filesystem::path& path);
ProbabilityMask3D read_probability(const std::filesystem::path& path);

}  // namespace cardioseg
