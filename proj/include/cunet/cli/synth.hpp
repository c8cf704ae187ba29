#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cunet/nifti/nifti.hpp"

namespace cunet::synth {

struct SynthOptions {
  std::size_t subjects = 12;
  std::size_t nx = 64, ny = 64, nz = 16;
  std::uint64_t seed = 1;
  bool gzip = true;
};

/// One generated subject: int16-valued modalities (zero outside the brain)
/// and a label volume over {0, 1, 2, 4}.
struct SynthSubject {
  std::string id;
  std::array<nifti::Volume, 4> modalities;  // t1, t1ce, t2, flair
  nifti::Volume seg;
};

/// Subject `index` depends only on (seed, index, extents).
SynthSubject make_synthetic_subject(std::size_t index, const SynthOptions& options);

/// Writes `<root>/<id>/<id>_{t1,t1ce,t2,flair,seg}.nii[.gz]`; returns the ids.
std::vector<std::string> write_synthetic_dataset(const std::filesystem::path& root,
                                                 const SynthOptions& options);

std::string synthetic_id(std::size_t index);

}  // namespace cunet::synth
