#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardioseg/augment.hpp"
#include "cardioseg/loss.hpp"
#include "cardioseg/networks.hpp"
#include "cardioseg/volume.hpp"

namespace cardioseg {

inline constexpr double kDefaultLearningRate = 1e-4;
inline constexpr std::size_t kInitIterations = 300000;
inline constexpr std::size_t kPropIterations = 600000;

/// Raised when training produces a non-finite loss or gradient.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t iteration, std::string layer = {})
      : std::runtime_error(what), iteration_(iteration), layer_(std::move(layer)) {}
  std::size_t iteration() const noexcept { return iteration_; }
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::size_t iteration_;
  std::string layer_;
};

struct TrainConfig {
  double learning_rate = kDefaultLearningRate;
  std::size_t batch_size = 1;
  std::size_t iterations = kInitIterations;
  std::uint64_t seed = 0;
  AugmentConfig augmentation{};
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_path;
  std::size_t log_every = 100;
  LossConfig loss{};

  static TrainConfig defaults(NetworkKind kind);
  void validate() const;
};

/// One init-network sample: 1 x 1 x S x S slice and binary mask.
struct InitSample {
  Tensor<float> slice;
  Tensor<float> mask;
};

/// One propagation window: channel 0 is the anchor, channels 1..4 the
/// lookahead slices in propagation order. Both tensors are 1 x 5 x S x S.
struct PropSample {
  Tensor<float> slices;
  Tensor<float> masks;
};

enum class Direction : int { up = 1, down = -1 };

/// Mid-volume slices below the base, skipping the top and bottom sixth.
std::vector<InitSample> init_samples(const Volume& v, const BinaryMask3D& gt);

/// Window anchored at `anchor` reaching four slices in `direction`.
/// Throws if the window leaves [0, base_index].
PropSample make_prop_sample(const Volume& v, const BinaryMask3D& gt, std::size_t anchor, Direction direction);

/// Every window below the base in the given direction.
std::vector<PropSample> prop_samples(const Volume& v, const BinaryMask3D& gt, Direction direction);

/// Upward windows plus their order-reversed (downward) counterparts.
std::vector<PropSample> prop_samples(const Volume& v, const BinaryMask3D& gt);

struct LossRecord {
  std::size_t iteration = 0;  // 1-based
  double total = 0.0;
  std::vector<double> per_scale;
};

struct TrainResult {
  ModelParameters<float> params;
  std::vector<LossRecord> log;
  std::vector<std::size_t> scales;
  double first_loss = 0.0;
  double final_loss = 0.0;
};

using TrainCallback = std::function<void(const LossRecord&)>;

/// w <- w - lr * grad for every learnable tensor; running statistics are left
/// alone. Throws NumericError naming the tensor on a non-finite gradient.
template <typename T>
void sgd_step(ModelParameters<T>& params, const ModelParameters<T>& grads, double lr);

TrainResult train_init(const std::vector<InitSample>& dataset, const TrainConfig& cfg,
                       const ArchSpec& arch = ArchSpec::defaults(NetworkKind::init), const TrainCallback& on_log = {});

/// Teacher forcing: the anchor mask fed to the network is the ground truth.
TrainResult train_prop(const std::vector<PropSample>& dataset, const TrainConfig& cfg,
                       const ArchSpec& arch = ArchSpec::defaults(NetworkKind::propagation),
                       const TrainCallback& on_log = {});

/// CSV with columns iteration,total_loss,loss_<scale>...
void write_loss_log(const std::filesystem::path& path, const std::vector<std::size_t>& scales,
                    const std::vector<LossRecord>& log);

}  // namespace cardioseg
