#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cunet/nifti/nifti.hpp"
#include "cunet/tensor/tensor.hpp"

namespace cunet::data {

namespace fs = std::filesystem;

/// Input channel order of every image tensor.
inline constexpr std::array<std::string_view, 4> kModalities{"t1", "t1ce", "t2", "flair"};

/// One subject directory: `<root>/<id>/<id>_{t1,t1ce,t2,flair,seg}.nii[.gz]`.
struct SubjectRecord {
  std::string id;
  std::array<fs::path, 4> modality_paths;
  fs::path seg_path;  // empty when the subject has no segmentation
};

struct Discovery {
  std::vector<SubjectRecord> subjects;  // sorted by id
  std::vector<std::string> warnings;    // one line per excluded subject
};

/// Scans `root` for complete subjects. Incomplete ones are excluded and
/// reported; throws DataError when nothing usable remains.
Discovery discover_subjects(const fs::path& root);

/// Resolves one subject directory. With `require_seg` false a missing
/// segmentation leaves seg_path empty.
SubjectRecord subject_from_dir(const fs::path& dir, bool require_seg);

enum class Fold { train, val, test };

std::string_view fold_name(Fold fold);
Fold parse_fold(std::string_view name);

/// Subject-level partition into train / val / test.
struct SplitSpec {
  std::uint64_t seed = 0;
  std::map<std::string, Fold> membership;

  /// Ids of one fold in lexicographic order.
  std::vector<std::string> members(Fold fold) const;
  std::size_t size(Fold fold) const;

  /// "# seed N" followed by "<id> <fold>" lines in id order.
  std::string to_manifest() const;
  static SplitSpec from_manifest(const std::string& text);

  void write(const fs::path& path) const;
  static SplitSpec read(const fs::path& path);
};

/// Seeded shuffle of the ids, then floor(0.1 n) to val, the next
/// floor(0.1 n) to test and the remainder to train. Requires n >= 3.
SplitSpec split_subjects(std::span<const SubjectRecord> subjects, std::uint64_t seed);
SplitSpec split_ids(std::vector<std::string> ids, std::uint64_t seed);

/// Whole-tumour mask: 1 where label > 0. Labels must be non-negative
/// integers.
nifti::Volume binarize_mask(const nifti::Volume& seg);

/// Z-score over nonzero voxels; background stays 0.
nifti::Volume normalize_modality(const nifti::Volume& vol);

/// Normalised modalities plus the binarised segmentation of one subject.
struct SubjectVolumes {
  std::string id;
  std::array<nifti::Volume, 4> modalities;
  std::optional<nifti::Volume> mask;
};

/// Reads, checks extents, normalises and binarises one subject.
SubjectVolumes load_subject(const SubjectRecord& record);

enum class SlicePolicy { all, nonempty };

std::string_view policy_name(SlicePolicy policy);
SlicePolicy parse_policy(std::string_view name);

/// Symmetric zero padding of an in-plane extent up to a multiple.
struct Padding {
  std::size_t before = 0;
  std::size_t padded = 0;
  std::size_t original = 0;
};

inline constexpr std::size_t kPadMultiple = 32;

Padding padding_for(std::size_t extent, std::size_t multiple = kPadMultiple);

struct SliceSample {
  std::string subject_id;
  std::size_t z = 0;
  Tensor<float> image;  // [4, H, W]
  Tensor<float> mask;   // [1, H, W], values in {0, 1}
};

/// One sample per axial slice, padded so both in-plane extents divide by
/// `multiple`. `nonempty` keeps every slice with tumour plus an equal
/// number (or all, if fewer) of seeded-random empty slices, in z order.
/// Without a mask only `all` is valid and masks are zero.
std::vector<SliceSample> extract_slices(const SubjectVolumes& subject, SlicePolicy policy,
                                        std::uint64_t seed,
                                        std::size_t multiple = kPadMultiple);

/// Order of sample indices for one epoch.
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch,
                                     bool shuffle);

template <typename T>
struct Batch {
  Tensor<T> images;  // [B, 4, H, W]
  Tensor<T> masks;   // [B, 1, H, W]
  std::vector<std::size_t> indices;
};

/// Stacks samples into batches; the last batch may be short.
template <typename T>
class BatchIterator {
 public:
  BatchIterator(std::span<const SliceSample> samples, std::size_t batch_size,
                std::uint64_t seed, bool shuffle);

  void start_epoch(std::size_t epoch);
  bool next(Batch<T>& batch);
  std::size_t batches_per_epoch() const;

 private:
  std::span<const SliceSample> samples_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Stacks the given samples (by index) into one batch.
template <typename T>
Batch<T> make_batch(std::span<const SliceSample> samples, std::span<const std::size_t> indices);

/// FNV-1a, used to derive per-subject seeds portably.
std::uint64_t stable_hash(std::string_view text);

}  // namespace cunet::data
