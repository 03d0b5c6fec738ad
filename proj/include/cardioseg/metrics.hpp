#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cardioseg/volume.hpp"

namespace cardioseg {

/// 2|a n b| / (|a| + |b|), 1 when both masks are empty.
double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// Dice of slice `za` of `a` against slice `zb` of `b`.
double dice_2d(const BinaryMask3D& a, std::size_t za, const BinaryMask3D& b, std::size_t zb);

/// Pooled over all voxels of both stacks (not the mean of slice scores).
double dice_3d(const BinaryMask3D& a, const BinaryMask3D& b);

/// Slices [first, last] of `m` as a new stack.
BinaryMask3D slice_range(const BinaryMask3D& m, std::size_t first, std::size_t last);

struct DiceProfile {
  std::vector<double> dice;   // one entry per slice
  double max_jump = 0.0;      // max |dice[z+1] - dice[z]|
};

DiceProfile slicewise_dice_profile(const BinaryMask3D& pred, const BinaryMask3D& gt);

/// CSV with header slice_index,dice.
void write_profile_csv(const std::filesystem::path& path, const DiceProfile& profile);

}  // namespace cardioseg
