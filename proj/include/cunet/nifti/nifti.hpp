#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cunet::nifti {

/// Voxel datatype codes understood by the reader and writer.
enum class DataType : std::int16_t {
  uint8 = 2,
  int16 = 4,
  int32 = 8,
  float32 = 16,
  float64 = 64,
};

enum class Endianness { little, big };

/// Human-readable name of a datatype code, or "unknown".
std::string datatype_name(std::int16_t code);

/// Bits per voxel for a supported code; throws NiftiError otherwise.
int datatype_bits(std::int16_t code);

inline constexpr int kHeaderSize = 348;
inline constexpr int kSingleFileOffset = 352;

/// Decoded NIfTI-1 header. Every field of the 348-byte layout is kept so a
/// read/write cycle preserves orientation and descriptive fields even though
/// the pipeline itself works in voxel space.
struct Header {
  std::int32_t sizeof_hdr = kHeaderSize;
  std::array<char, 10> data_type{};
  std::array<char, 18> db_name{};
  std::int32_t extents = 0;
  std::int16_t session_error = 0;
  char regular = 'r';
  char dim_info = 0;
  std::array<std::int16_t, 8> dim{};
  float intent_p1 = 0, intent_p2 = 0, intent_p3 = 0;
  std::int16_t intent_code = 0;
  std::int16_t datatype = 0;
  std::int16_t bitpix = 0;
  std::int16_t slice_start = 0;
  std::array<float, 8> pixdim{};
  float vox_offset = kSingleFileOffset;
  float scl_slope = 1;
  float scl_inter = 0;
  std::int16_t slice_end = 0;
  char slice_code = 0;
  char xyzt_units = 0;
  float cal_max = 0, cal_min = 0;
  float slice_duration = 0;
  float toffset = 0;
  std::int32_t glmax = 0, glmin = 0;
  std::array<char, 80> descrip{};
  std::array<char, 24> aux_file{};
  std::int16_t qform_code = 0, sform_code = 0;
  float quatern_b = 0, quatern_c = 0, quatern_d = 0;
  float qoffset_x = 0, qoffset_y = 0, qoffset_z = 0;
  std::array<float, 4> srow_x{}, srow_y{}, srow_z{};
  std::array<char, 16> intent_name{};
  std::array<char, 4> magic{'n', '+', '1', '\0'};

  Endianness endianness = Endianness::little;

  /// Spatial extents dim[1..3]; missing trailing axes count as 1.
  std::array<std::size_t, 3> extents3() const;

  /// scl_slope with the "0 means 1" convention applied.
  double effective_slope() const;

  friend bool operator==(const Header&, const Header&) = default;
};

/// Voxel grid indexed (x, y, z) with x fastest, holding scaled values.
class Volume {
 public:
  Volume() = default;
  Volume(std::size_t nx, std::size_t ny, std::size_t nz, double fill = 0.0);

  /// Builds a header for the extents with unit spacing and the given type.
  static Header make_header(std::size_t nx, std::size_t ny, std::size_t nz,
                            DataType type = DataType::float32);

  std::size_t nx() const { return extents_[0]; }
  std::size_t ny() const { return extents_[1]; }
  std::size_t nz() const { return extents_[2]; }
  const std::array<std::size_t, 3>& extents() const { return extents_; }
  std::size_t size() const { return voxels_.size(); }

  double& at(std::size_t x, std::size_t y, std::size_t z) {
    return voxels_[(z * extents_[1] + y) * extents_[0] + x];
  }
  double at(std::size_t x, std::size_t y, std::size_t z) const {
    return voxels_[(z * extents_[1] + y) * extents_[0] + x];
  }

  std::span<double> voxels() { return voxels_; }
  std::span<const double> voxels() const { return voxels_; }

  Header header;

 private:
  std::array<std::size_t, 3> extents_{0, 0, 0};
  std::vector<double> voxels_;
};

/// Decodes the 348-byte header. `bytes` may be gzip-compressed. Byte order
/// is detected by testing sizeof_hdr == 348 under both orders.
Header read_header(std::span<const std::uint8_t> bytes);

/// Reads a .nii or .nii.gz file.
Volume read_volume(const std::filesystem::path& path);

/// Decodes an in-memory single-file image (plain or gzip).
Volume decode_volume(std::span<const std::uint8_t> bytes);

/// Encodes a single-file image: 348-byte header, 4 zero extension bytes,
/// then the payload in little-endian order. Values are stored unscaled
/// (scl_slope 1, scl_inter 0) and must fit the target type exactly.
std::vector<std::uint8_t> encode_volume(const Volume& volume, DataType type);

/// Writes via a temporary file and an atomic rename. A ".gz" extension
/// selects gzip compression.
void write_volume(const Volume& volume, const std::filesystem::path& path, DataType type);

/// Raw header bytes as they would be written (little-endian), exposed for
/// tests that construct byte-swapped variants.
std::array<std::uint8_t, kHeaderSize> encode_header(const Header& header);

/// Reverses every multi-byte field of a little-endian encoded header.
std::array<std::uint8_t, kHeaderSize> byte_swap_header(
    const std::array<std::uint8_t, kHeaderSize>& little);

/// gzip helpers (RFC 1952 container via zlib).
bool is_gzip(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes bytes to `path` through a sibling temp file and rename.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cunet::nifti
