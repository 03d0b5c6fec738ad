#pragma once

// Volume segmentation: initial slice, bidirectional propagation, binarization.

#include <array>
#include <functional>
#include <map>
#include <vector>

#include "cardioseg/networks.hpp"
#include "cardioseg/training.hpp"
#include "cardioseg/volume.hpp"

namespace cardioseg {

inline constexpr float kBinarizeThreshold = 0.5f;

/// value >= threshold -> 1.
BinaryMask3D binarize(const ProbabilityMask3D& prob, float threshold = kBinarizeThreshold);
Tensor<float> binarize(const Tensor<float>& prob, float threshold = kBinarizeThreshold);

/// Which slices a single propagation-network call looks at.
struct PropagationQuery {
  Direction direction = Direction::up;
  std::size_t anchor = 0;
  std::array<std::size_t, kLookahead> lookahead{};
};

/// Returns the 1 x 1 x S x S probability mask of slice `z`.
using InitPredictor = std::function<Tensor<float>(const Tensor<float>& slice, std::size_t z)>;
/// Returns 1 x 4 x S x S probabilities for the query's lookahead slices.
using PropPredictor = std::function<Tensor<float>(const PropagationInput<float>& input, const PropagationQuery& q)>;

InitPredictor make_init_predictor(const ModelParameters<float>& params);
PropPredictor make_prop_predictor(const ModelParameters<float>& params);

struct PropagationOptions {
  /// Slices written per call; 4 uses every prediction, 1 keeps only the nearest.
  std::size_t stride = kLookahead;
};

struct PropagationState {
  Direction direction = Direction::up;
  std::size_t frontier = 0;  // last masked slice in propagation order
  std::size_t apex_limit = kApexLimit;
  std::size_t base_index = 0;
  std::map<std::size_t, Tensor<float>> masks;  // probability masks of newly segmented slices
  std::vector<std::size_t> anchors;            // anchor of every network call, in order
};

/// Propagates from `init_index` towards the base (up) or apex (down) until
/// every slice up to the bound has a mask. Windows that would cross the bound
/// are re-anchored so their last lookahead slice lands on it; only slices
/// without a mask are written. The anchor mask fed forward is binarized.
PropagationState propagate(const Volume& v, const Tensor<float>& init_mask, std::size_t init_index,
                           const PropPredictor& predictor, Direction direction, const PropagationOptions& opts = {});

struct SegmentationResult {
  ProbabilityMask3D probability;
  BinaryMask3D binary;
  std::size_t init_index = 0;
  std::size_t first_slice = 0;  // inclusive range of segmented slices
  std::size_t last_slice = 0;
  std::size_t propagation_calls = 0;
};

/// `v` must already be preprocessed. Slices above the base stay zero.
SegmentationResult segment_volume(const Volume& v, const InitPredictor& init, const PropPredictor& prop,
                                  const PropagationOptions& opts = {});

SegmentationResult segment_volume(const Volume& v, const ModelParameters<float>& init_params,
                                  const ModelParameters<float>& prop_params, const PropagationOptions& opts = {});

}  // namespace cardioseg
