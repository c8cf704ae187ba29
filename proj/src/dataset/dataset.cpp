#include "cunet/dataset/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cunet/error.hpp"
#include "cunet/tensor/random.hpp"

namespace cunet::data {
namespace {

std::optional<fs::path> find_image(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    fs::path p = dir / (stem + ext);
    if (fs::is_regular_file(p)) return p;
  }
  return std::nullopt;
}

}  // namespace

std::uint64_t stable_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : text) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

SubjectRecord subject_from_dir(const fs::path& dir, bool require_seg) {
  SubjectRecord rec;
  rec.id = dir.filename().string();
  if (rec.id.empty()) rec.id = dir.parent_path().filename().string();
  std::vector<std::string> missing;
  for (std::size_t m = 0; m < kModalities.size(); ++m) {
    auto p = find_image(dir, rec.id + "_" + std::string(kModalities[m]));
    if (p) {
      rec.modality_paths[m] = *p;
    } else {
      missing.emplace_back(kModalities[m]);
    }
  }
  if (auto seg = find_image(dir, rec.id + "_seg")) {
    rec.seg_path = *seg;
  } else if (require_seg) {
    missing.emplace_back("seg");
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("subject " + rec.id + " is missing " + list);
  }
  return rec;
}

Discovery discover_subjects(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw DataError("no usable subjects: data root " + root.string() + " is not a directory");
  }
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  Discovery out;
  for (const auto& dir : dirs) {
    try {
      out.subjects.push_back(subject_from_dir(dir, true));
    } catch (const DataError& e) {
      out.warnings.push_back(std::string("excluded: ") + e.what());
    }
  }
  if (out.subjects.empty()) {
    throw DataError("no usable subjects under " + root.string() + " (" +
                    std::to_string(out.warnings.size()) + " incomplete)");
  }
  return out;
}

std::string_view fold_name(Fold fold) {
  switch (fold) {
    case Fold::train:
      return "train";
    case Fold::val:
      return "val";
    case Fold::test:
      return "test";
  }
  return "?";
}

Fold parse_fold(std::string_view name) {
  if (name == "train") return Fold::train;
  if (name == "val") return Fold::val;
  if (name == "test") return Fold::test;
  throw DataError("unknown fold \"" + std::string(name) + "\"");
}

std::vector<std::string> SplitSpec::members(Fold fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : membership) {
    if (f == fold) ids.push_back(id);
  }
  return ids;
}

std::size_t SplitSpec::size(Fold fold) const {
  return static_cast<std::size_t>(std::count_if(
      membership.begin(), membership.end(), [fold](const auto& kv) { return kv.second == fold; }));
}

std::string SplitSpec::to_manifest() const {
  std::ostringstream os;
  os << "# seed " << seed << '\n';
  for (const auto& [id, fold] : membership) os << id << ' ' << fold_name(fold) << '\n';
  return os.str();
}

SplitSpec SplitSpec::from_manifest(const std::string& text) {
  SplitSpec spec;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("# seed ", 0) == 0) {
      spec.seed = std::stoull(line.substr(7));
      continue;
    }
    if (line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id, fold;
    if (!(ls >> id >> fold)) throw DataError("malformed split manifest line: " + line);
    spec.membership[id] = parse_fold(fold);
  }
  return spec;
}

void SplitSpec::write(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write split manifest " + path.string());
  out << to_manifest();
}

SplitSpec SplitSpec::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read split manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_manifest(ss.str());
}

SplitSpec split_ids(std::vector<std::string> ids, std::uint64_t seed) {
  const std::size_t n = ids.size();
  if (n < 3) throw DataError("split needs at least 3 subjects, got " + std::to_string(n));
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw DataError("duplicate subject ids");
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(ids));
  const std::size_t held = n / 10;  // floor(0.1 n)
  SplitSpec spec;
  spec.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    spec.membership[ids[i]] = i < held ? Fold::val : i < 2 * held ? Fold::test : Fold::train;
  }
  return spec;
}

SplitSpec split_subjects(std::span<const SubjectRecord> subjects, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(subjects.size());
  for (const auto& s : subjects) ids.push_back(s.id);
  return split_ids(std::move(ids), seed);
}

nifti::Volume binarize_mask(const nifti::Volume& seg) {
  nifti::Volume out = seg;
  auto v = out.voxels();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0 || v[i] != std::floor(v[i])) {
      throw DataError("segmentation label " + std::to_string(v[i]) + " at voxel " +
                      std::to_string(i) + " is not a non-negative integer");
    }
    v[i] = v[i] > 0 ? 1.0 : 0.0;
  }
  return out;
}

nifti::Volume normalize_modality(const nifti::Volume& vol) {
  nifti::Volume out = vol;
  auto v = out.voxels();
  double s = 0;
  std::size_t n = 0;
  for (const double x : v) {
    if (x != 0.0) {
      s += x;
      ++n;
    }
  }
  if (n == 0) return out;
  const double mean = s / static_cast<double>(n);
  double ss = 0;
  for (const double x : v) {
    if (x != 0.0) ss += (x - mean) * (x - mean);
  }
  const double sd = std::max(std::sqrt(ss / static_cast<double>(n)), 1e-8);
  for (auto& x : v) {
    if (x != 0.0) x = (x - mean) / sd;
  }
  return out;
}

SubjectVolumes load_subject(const SubjectRecord& record) {
  SubjectVolumes sv;
  sv.id = record.id;
  for (std::size_t m = 0; m < kModalities.size(); ++m) {
    sv.modalities[m] = normalize_modality(nifti::read_volume(record.modality_paths[m]));
  }
  const auto& ext = sv.modalities[0].extents();
  for (std::size_t m = 1; m < kModalities.size(); ++m) {
    if (sv.modalities[m].extents() != ext) {
      throw DataError("subject " + record.id + ": " + std::string(kModalities[m]) +
                      " extents differ from t1");
    }
  }
  if (!record.seg_path.empty()) {
    sv.mask = binarize_mask(nifti::read_volume(record.seg_path));
    if (sv.mask->extents() != ext) {
      throw DataError("subject " + record.id + ": seg extents differ from t1");
    }
  }
  return sv;
}

std::string_view policy_name(SlicePolicy policy) {
  return policy == SlicePolicy::all ? "all" : "nonempty";
}

SlicePolicy parse_policy(std::string_view name) {
  if (name == "all") return SlicePolicy::all;
  if (name == "nonempty") return SlicePolicy::nonempty;
  throw ConfigError("unknown slice policy \"" + std::string(name) + "\"");
}

Padding padding_for(std::size_t extent, std::size_t multiple) {
  Padding p;
  p.original = extent;
  p.padded = (extent + multiple - 1) / multiple * multiple;
  p.before = (p.padded - extent) / 2;
  return p;
}

std::vector<SliceSample> extract_slices(const SubjectVolumes& subject, SlicePolicy policy,
                                        std::uint64_t seed, std::size_t multiple) {
  const auto ext = subject.modalities[0].extents();
  for (const auto& m : subject.modalities) {
    if (m.extents() != ext) throw DataError("subject " + subject.id + ": modality extents differ");
  }
  if (subject.mask && subject.mask->extents() != ext) {
    throw DataError("subject " + subject.id + ": mask extents differ from modalities");
  }
  if (!subject.mask && policy == SlicePolicy::nonempty) {
    throw DataError("subject " + subject.id + ": nonempty policy needs a segmentation");
  }
  const std::size_t nx = ext[0], ny = ext[1], nz = ext[2];
  const Padding px = padding_for(nx, multiple), py = padding_for(ny, multiple);

  std::vector<std::size_t> keep;
  if (policy == SlicePolicy::all) {
    for (std::size_t z = 0; z < nz; ++z) keep.push_back(z);
  } else {
    std::vector<std::size_t> positive, empty;
    for (std::size_t z = 0; z < nz; ++z) {
      bool any = false;
      for (std::size_t y = 0; y < ny && !any; ++y)
        for (std::size_t x = 0; x < nx && !any; ++x) any = subject.mask->at(x, y, z) > 0;
      (any ? positive : empty).push_back(z);
    }
    Rng rng(Rng::mix(seed, stable_hash(subject.id)));
    rng.shuffle(std::span<std::size_t>(empty));
    empty.resize(std::min(empty.size(), positive.size()));
    keep = positive;
    keep.insert(keep.end(), empty.begin(), empty.end());
    std::sort(keep.begin(), keep.end());
  }

  std::vector<SliceSample> out;
  out.reserve(keep.size());
  for (const std::size_t z : keep) {
    SliceSample s;
    s.subject_id = subject.id;
    s.z = z;
    s.image = Tensor<float>(Shape{4, py.padded, px.padded}, 0.0f);
    s.mask = Tensor<float>(Shape{1, py.padded, px.padded}, 0.0f);
    for (std::size_t c = 0; c < 4; ++c) {
      const auto& vol = subject.modalities[c];
      for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
          s.image[(c * py.padded + y + py.before) * px.padded + x + px.before] =
              static_cast<float>(vol.at(x, y, z));
        }
    }
    if (subject.mask) {
      for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
          s.mask[(y + py.before) * px.padded + x + px.before] =
              subject.mask->at(x, y, z) > 0 ? 1.0f : 0.0f;
        }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch,
                                     bool shuffle) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  if (shuffle) {
    Rng rng(Rng::mix(seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));
  }
  return order;
}

template <typename T>
Batch<T> make_batch(std::span<const SliceSample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("empty batch");
  const Shape& ishape = samples[indices[0]].image.shape();
  const Shape& mshape = samples[indices[0]].mask.shape();
  const std::size_t B = indices.size();
  Batch<T> b;
  b.images = Tensor<T>(Shape{B, ishape[0], ishape[1], ishape[2]});
  b.masks = Tensor<T>(Shape{B, mshape[0], mshape[1], mshape[2]});
  const std::size_t isz = shape_numel(ishape), msz = shape_numel(mshape);
  for (std::size_t i = 0; i < B; ++i) {
    const auto& s = samples[indices[i]];
    if (s.image.shape() != ishape || s.mask.shape() != mshape) {
      throw ShapeError("batch samples have different shapes: " + shape_to_string(ishape) +
                       " vs " + shape_to_string(s.image.shape()));
    }
    std::copy(s.image.data().begin(), s.image.data().end(), b.images.raw() + i * isz);
    std::copy(s.mask.data().begin(), s.mask.data().end(), b.masks.raw() + i * msz);
  }
  b.indices.assign(indices.begin(), indices.end());
  return b;
}

template <typename T>
BatchIterator<T>::BatchIterator(std::span<const SliceSample> samples, std::size_t batch_size,
                                std::uint64_t seed, bool shuffle)
    : samples_(samples), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (samples_.empty()) throw DataError("cannot batch an empty sample list");
  if (batch_size_ == 0) throw ConfigError("batch size must be at least 1");
  start_epoch(0);
}

template <typename T>
void BatchIterator<T>::start_epoch(std::size_t epoch) {
  order_ = epoch_order(samples_.size(), seed_, epoch, shuffle_);
  cursor_ = 0;
}

template <typename T>
bool BatchIterator<T>::next(Batch<T>& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  batch = make_batch<T>(samples_, std::span<const std::size_t>(order_).subspan(cursor_, end - cursor_));
  cursor_ = end;
  return true;
}

template <typename T>
std::size_t BatchIterator<T>::batches_per_epoch() const {
  return (samples_.size() + batch_size_ - 1) / batch_size_;
}

template class BatchIterator<float>;
template class BatchIterator<double>;
template Batch<float> make_batch<float>(std::span<const SliceSample>, std::span<const std::size_t>);
template Batch<double> make_batch<double>(std::span<const SliceSample>,
                                          std::span<const std::size_t>);

}  // namespace cunet::data
