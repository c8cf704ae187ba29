#include "cunet/cli/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cunet/dataset/dataset.hpp"
#include "cunet/error.hpp"
#include "cunet/tensor/random.hpp"

namespace cunet::synth {
namespace {

struct Ellipsoid {
  double cx, cy, cz, rx, ry, rz;

  // < 1 inside
  double radius(double x, double y, double z) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry, dz = (z - cz) / rz;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }
};

// 3x3x3 box blur, clamped at the borders; applied twice for a smoother
// texture than white noise.
std::vector<double> smooth(const std::vector<double>& in, std::size_t nx, std::size_t ny,
                           std::size_t nz) {
  std::vector<double> out(in.size());
  auto idx = [&](long x, long y, long z) { return (std::size_t(z) * ny + std::size_t(y)) * nx + std::size_t(x); };
  for (long z = 0; z < long(nz); ++z)
    for (long y = 0; y < long(ny); ++y)
      for (long x = 0; x < long(nx); ++x) {
        double s = 0;
        int n = 0;
        for (long dz = -1; dz <= 1; ++dz)
          for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
              const long xx = x + dx, yy = y + dy, zz = z + dz;
              if (xx < 0 || yy < 0 || zz < 0 || xx >= long(nx) || yy >= long(ny) || zz >= long(nz)) continue;
              s += in[idx(xx, yy, zz)];
              ++n;
            }
        out[idx(x, y, z)] = s / n;
      }
  return out;
}

}  // namespace

std::string synthetic_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%03zu", index);
  return buf;
}

SynthSubject make_synthetic_subject(std::size_t index, const SynthOptions& o) {
  if (o.nx < 8 || o.ny < 8 || o.nz < 4) throw ConfigError("synthetic volumes must be at least 8x8x4");
  Rng rng(Rng::mix(o.seed, index));
  const double nx = double(o.nx), ny = double(o.ny), nz = double(o.nz);
  const double scale = std::min(nx, ny) / 64.0;

  const Ellipsoid brain{nx / 2 + rng.uniform(-2, 2), ny / 2 + rng.uniform(-2, 2),
                        nz / 2 + rng.uniform(-0.5, 0.5), nx * rng.uniform(0.38, 0.45),
                        ny * rng.uniform(0.38, 0.45), nz * rng.uniform(0.55, 0.65)};
  // tumour radii: 6-12 voxels in-plane at 64x64, 2.5-4.5 slices through-plane
  Ellipsoid tumor{0, 0, 0, rng.uniform(6, 12) * scale, rng.uniform(6, 12) * scale,
                  std::min(rng.uniform(2.5, 4.5), nz / 3)};
  // keep the tumour inside the brain: centre within the brain's inner part
  const double ux = std::max(0.0, brain.rx - tumor.rx - 1), uy = std::max(0.0, brain.ry - tumor.ry - 1);
  tumor.cx = brain.cx + rng.uniform(-ux, ux) * 0.7;
  tumor.cy = brain.cy + rng.uniform(-uy, uy) * 0.7;
  tumor.cz = brain.cz + rng.uniform(-1.5, 1.5);

  SynthSubject s;
  s.id = synthetic_id(index);
  s.seg = nifti::Volume(o.nx, o.ny, o.nz, 0.0);
  std::vector<std::uint8_t> in_brain(o.nx * o.ny * o.nz, 0);
  for (std::size_t z = 0; z < o.nz; ++z)
    for (std::size_t y = 0; y < o.ny; ++y)
      for (std::size_t x = 0; x < o.nx; ++x) {
        const double r = tumor.radius(double(x), double(y), double(z));
        const std::size_t i = (z * o.ny + y) * o.nx + x;
        in_brain[i] = brain.radius(double(x), double(y), double(z)) < 1.0;
        if (r < 1.0) {
          // necrotic core, enhancing ring, oedema shell
          s.seg.at(x, y, z) = r < 0.45 ? 1.0 : r < 0.7 ? 4.0 : 2.0;
          in_brain[i] = 1;
        }
      }
  // a tumour grid point always exists: the centre voxel
  const auto cx = std::size_t(std::clamp(std::lround(tumor.cx), 0L, long(o.nx) - 1));
  const auto cy = std::size_t(std::clamp(std::lround(tumor.cy), 0L, long(o.ny) - 1));
  const auto cz = std::size_t(std::clamp(std::lround(tumor.cz), 0L, long(o.nz) - 1));
  if (s.seg.at(cx, cy, cz) == 0.0) {
    s.seg.at(cx, cy, cz) = 1.0;
    in_brain[(cz * o.ny + cy) * o.nx + cx] = 1;
  }

  //                          t1     t1ce   t2     flair
  const double base[4] = {600, 650, 500, 450};
  const double core[4] = {-150, 80, 300, 250};
  const double ring[4] = {-100, 350, 250, 300};
  const double edema[4] = {-60, 40, 200, 320};
  for (std::size_t m = 0; m < 4; ++m) {
    std::vector<double> noise(in_brain.size());
    for (auto& v : noise) v = rng.normal();
    noise = smooth(smooth(noise, o.nx, o.ny, o.nz), o.nx, o.ny, o.nz);
    nifti::Volume vol(o.nx, o.ny, o.nz, 0.0);
    auto vox = vol.voxels();
    const auto seg = s.seg.voxels();
    for (std::size_t i = 0; i < vox.size(); ++i) {
      if (!in_brain[i]) continue;
      double v = base[m] + 120.0 * noise[i] + 20.0 * rng.normal();
      if (seg[i] == 1.0) v += core[m];
      if (seg[i] == 4.0) v += ring[m];
      if (seg[i] == 2.0) v += edema[m];
      vox[i] = std::clamp(std::round(v), 1.0, 32767.0);
    }
    vol.header = nifti::Volume::make_header(o.nx, o.ny, o.nz, nifti::DataType::int16);
    s.modalities[m] = std::move(vol);
  }
  s.seg.header = nifti::Volume::make_header(o.nx, o.ny, o.nz, nifti::DataType::uint8);
  return s;
}

std::vector<std::string> write_synthetic_dataset(const std::filesystem::path& root,
                                                 const SynthOptions& options) {
  if (options.subjects < 3) throw ConfigError("synth needs at least 3 subjects");
  const std::string ext = options.gzip ? ".nii.gz" : ".nii";
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < options.subjects; ++i) {
    const SynthSubject s = make_synthetic_subject(i, options);
    const auto dir = root / s.id;
    std::filesystem::create_directories(dir);
    for (std::size_t m = 0; m < 4; ++m) {
      nifti::write_volume(s.modalities[m], dir / (s.id + "_" + std::string(data::kModalities[m]) + ext),
                          nifti::DataType::int16);
    }
    nifti::write_volume(s.seg, dir / (s.id + "_seg" + ext), nifti::DataType::uint8);
    ids.push_back(s.id);
  }
  return ids;
}

}  // namespace cunet::synth
