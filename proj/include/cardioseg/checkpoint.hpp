#pragma once

// CSEG checkpoint format, all integers and floats little-endian:
//
//   char[4]  magic "CSEG"
//   u32      format_version
//   u32      network_kind (1 = init, 2 = propagation)
//   u32      image_size
//   u32      filter
//   u32      width_count, then width_count x u32 widths
//   f64      leaky_slope
//   f64      batch-norm momentum
//   f64      batch-norm epsilon
//   u32      tensor_count
//   per tensor:
//     u32 name_length, name bytes
//     u32 rank, rank x u32 extents
//     product(extents) x f32 values

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "cardioseg/networks.hpp"

namespace cardioseg {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string serialize_checkpoint(const ModelParameters<float>& params);
ModelParameters<float> deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const ModelParameters<float>& params, const std::filesystem::path& path);

/// Throws FormatError on a bad magic, version, truncation, or when
/// `expected_kind` is given and the stored network kind differs.
ModelParameters<float> load_checkpoint(const std::filesystem::path& path,
                                       std::optional<NetworkKind> expected_kind = std::nullopt);

}  // namespace cardioseg
