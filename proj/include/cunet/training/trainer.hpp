#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cunet/dataset/dataset.hpp"
#include "cunet/metrics/dice.hpp"
#include "cunet/model/checkpoint.hpp"
#include "cunet/model/config.hpp"
#include "cunet/nifti/nifti.hpp"

namespace cunet::train {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  int precision = 32;  // 32 or 64
  data::SlicePolicy slice_policy = data::SlicePolicy::nonempty;
  double threshold = 0.5;
  model::CUNetConfig model = model::CUNetConfig::desk();

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// `train.*` keys plus the model's `model.*` keys.
  model::KeyValues to_key_values() const;
  /// Starts from the defaults and applies the keys present; unknown keys
  /// are rejected.
  static TrainConfig from_key_values(const model::KeyValues& kv);
  std::string to_text() const { return model::format_key_values(to_key_values()); }
  static TrainConfig from_text(const std::string& text);
};

/// Padding multiple for slices fed to a model: 32, or 2^depth if larger.
std::size_t slice_multiple(const model::CUNetConfig& config);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_train_bce = 0;
  double val_dice = 0;
  double wall_seconds = 0;
};

/// Every axial slice of one subject, for whole-volume scoring.
struct EvalSubject {
  std::string id;
  std::size_t depth = 0;
  data::Padding pad_x, pad_y;  // scoring ignores the padded border
  std::vector<data::SliceSample> slices;
};

EvalSubject make_eval_subject(const data::SubjectVolumes& subject, std::size_t multiple);

struct TrainHooks {
  std::function<void(const EpochStats&)> on_epoch;
  /// Called with each new best checkpoint (strict improvement).
  std::function<void(const model::Checkpoint&)> on_improve;
};

struct TrainResult {
  model::Checkpoint best;
  std::vector<EpochStats> history;
};

/// Epoch loop: seeded shuffled batches, BCE, backward, SGD with momentum,
/// then volume Dice on the validation subjects. Throws NumericError with
/// epoch, batch and parameter norms if the loss goes non-finite.
TrainResult run_training(const TrainConfig& config, std::span<const data::SliceSample> train,
                         std::span<const EvalSubject> val, const TrainHooks& hooks = {});

/// 1-based epoch with the highest val_dice; the earliest wins ties.
std::size_t select_best(std::span<const EpochStats> stats);

/// Eval-mode volume Dice per subject. Throws DataError on an empty list.
metrics::DiceReport evaluate_subjects(const model::Checkpoint& ckpt,
                                      std::span<const EvalSubject> subjects, double threshold,
                                      std::size_t batch_size = 8);

/// Repeated SGD steps on one fixed batch; BCE before each step.
std::vector<double> overfit_single_batch(const TrainConfig& config,
                                         std::span<const data::SliceSample> batch,
                                         std::size_t steps);

/// Thresholded eval-mode prediction for one subject, cropped back to the
/// input extents. Voxels are 0/1 and the header matches the t1 geometry.
nifti::Volume predict_volume(const model::Checkpoint& ckpt, const data::SubjectVolumes& subject,
                             double threshold, std::size_t batch_size = 8);

/// Per-slice probability maps [1, H, W] (padded) for a list of samples.
std::vector<Tensor<float>> predict_slices(const model::Checkpoint& ckpt,
                                          std::span<const data::SliceSample> slices,
                                          std::size_t batch_size = 8);

}  // namespace cunet::train
