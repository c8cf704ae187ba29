#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cunet/tensor/tensor.hpp"

namespace cunet::metrics {

/// Strictly binary mask over an arbitrary shape.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(Shape shape, std::vector<std::uint8_t> values);

  /// Accepts only exact 0.0 / 1.0 values.
  static BinaryMask from_values(Shape shape, std::span<const double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::span<const std::uint8_t> values() const { return values_; }
  std::uint8_t operator[](std::size_t i) const { return values_[i]; }
  std::size_t count() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  Shape shape_;
  std::vector<std::uint8_t> values_;
};

/// 2|X n Y| / (|X| + |Y|); 1.0 when both masks are empty.
double dice_score(const BinaryMask& pred, const BinaryMask& truth);

/// 1 where prob > threshold. threshold must lie in (0, 1).
template <typename T>
BinaryMask binarize_prediction(const Tensor<T>& prob, double threshold = 0.5);

struct SliceMasks {
  std::size_t z = 0;
  BinaryMask pred;
  BinaryMask truth;
};

/// Dice over the whole stacked volume (one ratio of voxel counts, not a
/// mean over slices). Slices may arrive in any order but must cover
/// z = 0..depth-1 exactly once.
double volume_dice(std::span<const SliceMasks> slices, std::size_t depth);

/// Mean of per-slice Dice values, logged as a diagnostic next to the
/// volume score.
double mean_slice_dice(std::span<const SliceMasks> slices);

struct SubjectDice {
  std::string subject_id;
  double dice = 0;
};

struct DiceReport {
  std::vector<SubjectDice> per_subject;
  double mean = 0;
  std::size_t count = 0;
  std::optional<double> per_slice_mean;

  static DiceReport from(std::vector<SubjectDice> rows,
                         std::optional<double> per_slice_mean = std::nullopt);

  /// Tab-separated table: header line, one row per subject, then a "mean"
  /// row. `decimals` controls value formatting.
  std::string to_text(int decimals = 6) const;

  /// Parses to_text() output.
  static DiceReport parse(const std::string& text);
};

}  // namespace cunet::metrics
