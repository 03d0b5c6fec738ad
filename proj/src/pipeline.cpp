#include "cardioseg/pipeline.hpp"

#include <algorithm>
#include <memory>
#include <stdexcept>

namespace cardioseg {

BinaryMask3D binarize(const ProbabilityMask3D& prob, float threshold) {
  BinaryMask3D out(prob.grid);
  for (std::size_t i = 0; i < prob.data.size(); ++i) out.data[i] = prob.data[i] >= threshold ? 1 : 0;
  return out;
}

Tensor<float> binarize(const Tensor<float>& prob, float threshold) {
  Tensor<float> out(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) out[i] = prob[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

InitPredictor make_init_predictor(const ModelParameters<float>& params) {
  if (params.kind() != NetworkKind::init) throw std::invalid_argument("init predictor needs init-network parameters");
  auto shared = std::make_shared<const ModelParameters<float>>(params);
  return [shared](const Tensor<float>& slice, std::size_t) { return forward(*shared, slice).finest(); };
}

PropPredictor make_prop_predictor(const ModelParameters<float>& params) {
  if (params.kind() != NetworkKind::propagation)
    throw std::invalid_argument("propagation predictor needs propagation-network parameters");
  auto shared = std::make_shared<const ModelParameters<float>>(params);
  return [shared](const PropagationInput<float>& input, const PropagationQuery&) {
    return forward(*shared, input.stacked()).finest();
  };
}

PropagationState propagate(const Volume& v, const Tensor<float>& init_mask, std::size_t init_index,
                           const PropPredictor& predictor, Direction direction, const PropagationOptions& opts) {
  v.grid.validate();
  if (init_index < kApexLimit || init_index > v.grid.base_index)
    throw std::out_of_range("propagate: init index " + std::to_string(init_index) + " outside [" +
                            std::to_string(kApexLimit) + ", " + std::to_string(v.grid.base_index) + "]");
  if (opts.stride < 1 || opts.stride > kLookahead)
    throw std::invalid_argument("propagate: stride must lie in [1, " + std::to_string(kLookahead) + "]");
  const Shape slice_shape{1, 1, v.grid.dims[1], v.grid.dims[0]};
  if (init_mask.shape() != slice_shape)
    throw ShapeError("propagate: init mask " + shape_string(init_mask.shape()) + ", expected " +
                     shape_string(slice_shape));

  PropagationState st;
  st.direction = direction;
  st.frontier = init_index;
  st.base_index = v.grid.base_index;
  const bool up = direction == Direction::up;
  const auto d = static_cast<std::ptrdiff_t>(direction);
  const auto lo = static_cast<std::ptrdiff_t>(st.apex_limit);
  const auto hi = static_cast<std::ptrdiff_t>(st.base_index);
  const auto init = static_cast<std::ptrdiff_t>(init_index);
  const auto lookahead = static_cast<std::ptrdiff_t>(kLookahead);

  auto mask_of = [&](std::size_t z) -> const Tensor<float>& {
    return z == init_index ? init_mask : st.masks.at(z);
  };
  auto filled = [&](std::ptrdiff_t z) { return z == init || st.masks.count(static_cast<std::size_t>(z)) > 0; };

  for (;;) {
    const std::ptrdiff_t frontier = static_cast<std::ptrdiff_t>(st.frontier);
    const std::ptrdiff_t remaining = up ? hi - frontier : frontier - lo;
    if (remaining <= 0) break;

    std::ptrdiff_t anchor = frontier;
    if (remaining < lookahead) anchor = up ? std::max(hi - lookahead, init) : std::min(lo + lookahead, init);

    PropagationQuery q;
    q.direction = direction;
    q.anchor = static_cast<std::size_t>(anchor);
    auto stack = Tensor<float>::nchw(1, kLookahead, slice_shape[2], slice_shape[3]);
    for (std::ptrdiff_t k = 1; k <= lookahead; ++k) {
      const std::ptrdiff_t z = std::clamp(anchor + d * k, lo, hi);
      q.lookahead[static_cast<std::size_t>(k - 1)] = static_cast<std::size_t>(z);
      const auto s = v.slice(static_cast<std::size_t>(z));
      std::copy(s.begin(), s.end(), stack.plane(0, static_cast<std::size_t>(k - 1)));
    }
    PropagationInput<float> input{v.slice_tensor(q.anchor), binarize(mask_of(q.anchor)), std::move(stack)};
    const Tensor<float> pred = predictor(input, q);
    const Shape expected{1, kLookahead, slice_shape[2], slice_shape[3]};
    if (pred.shape() != expected)
      throw ShapeError("propagate: predictor returned " + shape_string(pred.shape()) + ", expected " +
                       shape_string(expected));
    st.anchors.push_back(q.anchor);

    std::size_t written = 0;
    for (std::size_t k = 0; k < kLookahead && written < opts.stride; ++k) {
      const auto z = static_cast<std::ptrdiff_t>(q.lookahead[k]);
      if (filled(z)) continue;
      const auto [it, inserted] = st.masks.emplace(static_cast<std::size_t>(z), Tensor<float>(slice_shape));
      std::copy(pred.plane(0, k), pred.plane(0, k) + it->second.size(), it->second.data());
      st.frontier = static_cast<std::size_t>(up ? std::max<std::ptrdiff_t>(z, static_cast<std::ptrdiff_t>(st.frontier))
                                                : std::min<std::ptrdiff_t>(z, static_cast<std::ptrdiff_t>(st.frontier)));
      ++written;
    }
    if (written == 0) throw std::logic_error("propagate: window produced no new slices");
  }
  return st;
}

SegmentationResult segment_volume(const Volume& v, const InitPredictor& init, const PropPredictor& prop,
                                  const PropagationOptions& opts) {
  v.grid.validate();
  SegmentationResult r;
  r.init_index = select_init_slice(v.grid);
  r.first_slice = kApexLimit;
  r.last_slice = v.grid.base_index;

  const Tensor<float> init_prob = init(v.slice_tensor(r.init_index), r.init_index);
  const Shape slice_shape{1, 1, v.grid.dims[1], v.grid.dims[0]};
  if (init_prob.shape() != slice_shape)
    throw ShapeError("segment_volume: init predictor returned " + shape_string(init_prob.shape()));
  const Tensor<float> init_mask = binarize(init_prob);

  r.probability = ProbabilityMask3D(v.grid, 0.0f);
  auto store = [&](std::size_t z, const Tensor<float>& m) {
    auto dst = r.probability.slice(z);
    std::transform(m.values().begin(), m.values().end(), dst.begin(),
                   [](float p) { return std::clamp(p, 0.0f, 1.0f); });
  };
  store(r.init_index, init_prob);
  for (Direction dir : {Direction::up, Direction::down}) {
    const PropagationState st = propagate(v, init_mask, r.init_index, prop, dir, opts);
    for (const auto& [z, m] : st.masks) store(z, m);
    r.propagation_calls += st.anchors.size();
  }
  r.binary = binarize(r.probability);
  return r;
}

SegmentationResult segment_volume(const Volume& v, const ModelParameters<float>& init_params,
                                  const ModelParameters<float>& prop_params, const PropagationOptions& opts) {
  for (const auto* p : {&init_params, &prop_params}) {
    if (v.grid.dims[0] != p->arch.image_size || v.grid.dims[1] != p->arch.image_size)
      throw ShapeError("segment_volume: slices are " + std::to_string(v.grid.dims[0]) + "x" +
                       std::to_string(v.grid.dims[1]) + ", network expects " + std::to_string(p->arch.image_size));
  }
  return segment_volume(v, make_init_predictor(init_params), make_prop_predictor(prop_params), opts);
}

}  // namespace cardioseg
