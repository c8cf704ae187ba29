#include "cunet/nifti/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <type_traits>

#include "cunet/error.hpp"

namespace cunet::nifti {
namespace {

template <typename T>
T load(const std::uint8_t* p, Endianness e) {
  std::array<std::uint8_t, sizeof(T)> buf;
  std::memcpy(buf.data(), p, sizeof(T));
  if (e == Endianness::big) std::reverse(buf.begin(), buf.end());
  T v;
  std::memcpy(&v, buf.data(), sizeof(T));
  return v;
}

template <typename T>
void store(std::uint8_t* p, T v, Endianness e) {
  std::array<std::uint8_t, sizeof(T)> buf;
  std::memcpy(buf.data(), &v, sizeof(T));
  if (e == Endianness::big) std::reverse(buf.begin(), buf.end());
  std::memcpy(p, buf.data(), sizeof(T));
}

template <typename>
struct is_std_array : std::false_type {};
template <typename T, std::size_t N>
struct is_std_array<std::array<T, N>> : std::true_type {};

/// Reads every field from (or writes every field to) `bytes` at its
/// NIfTI-1 offset.
class FieldCodec {
 public:
  FieldCodec(std::uint8_t* bytes, Endianness e, bool writing)
      : bytes_(bytes), e_(e), writing_(writing) {}

  template <typename F>
  void operator()(std::size_t offset, F& field) {
    if constexpr (is_std_array<F>::value) {
      using E = typename F::value_type;
      for (std::size_t i = 0; i < field.size(); ++i) scalar(offset + i * sizeof(E), field[i]);
    } else {
      scalar(offset, field);
    }
  }

 private:
  template <typename S>
  void scalar(std::size_t offset, S& v) {
    if (writing_) {
      store(bytes_ + offset, v, e_);
    } else {
      v = load<S>(bytes_ + offset, e_);
    }
  }

  std::uint8_t* bytes_;
  Endianness e_;
  bool writing_;
};

template <typename Fn>
void for_each_field(Header& h, Fn&& fn) {
  fn(0, h.sizeof_hdr);
  fn(4, h.data_type);
  fn(14, h.db_name);
  fn(32, h.extents);
  fn(36, h.session_error);
  fn(38, h.regular);
  fn(39, h.dim_info);
  fn(40, h.dim);
  fn(56, h.intent_p1);
  fn(60, h.intent_p2);
  fn(64, h.intent_p3);
  fn(68, h.intent_code);
  fn(70, h.datatype);
  fn(72, h.bitpix);
  fn(74, h.slice_start);
  fn(76, h.pixdim);
  fn(108, h.vox_offset);
  fn(112, h.scl_slope);
  fn(116, h.scl_inter);
  fn(120, h.slice_end);
  fn(122, h.slice_code);
  fn(123, h.xyzt_units);
  fn(124, h.cal_max);
  fn(128, h.cal_min);
  fn(132, h.slice_duration);
  fn(136, h.toffset);
  fn(140, h.glmax);
  fn(144, h.glmin);
  fn(148, h.descrip);
  fn(228, h.aux_file);
  fn(252, h.qform_code);
  fn(254, h.sform_code);
  fn(256, h.quatern_b);
  fn(260, h.quatern_c);
  fn(264, h.quatern_d);
  fn(268, h.qoffset_x);
  fn(272, h.qoffset_y);
  fn(276, h.qoffset_z);
  fn(280, h.srow_x);
  fn(296, h.srow_y);
  fn(312, h.srow_z);
  fn(328, h.intent_name);
  fn(344, h.magic);
}

std::array<std::uint8_t, kHeaderSize> encode_with(Header h, Endianness e) {
  std::array<std::uint8_t, kHeaderSize> out{};
  for_each_field(h, FieldCodec(out.data(), e, true));
  return out;
}

bool is_supported(std::int16_t code) {
  switch (static_cast<DataType>(code)) {
    case DataType::uint8:
    case DataType::int16:
    case DataType::int32:
    case DataType::float32:
    case DataType::float64:
      return true;
  }
  return false;
}

double decode_voxel(const std::uint8_t* p, std::int16_t code, Endianness e) {
  switch (static_cast<DataType>(code)) {
    case DataType::uint8:
      return *p;
    case DataType::int16:
      return load<std::int16_t>(p, e);
    case DataType::int32:
      return load<std::int32_t>(p, e);
    case DataType::float32:
      return load<float>(p, e);
    case DataType::float64:
      return load<double>(p, e);
  }
  throw NiftiError("unsupported datatype code " + std::to_string(code));
}

template <typename I>
void encode_integer(std::uint8_t* p, double v) {
  if (!std::isfinite(v) || v != std::floor(v) ||
      v < static_cast<double>(std::numeric_limits<I>::min()) ||
      v > static_cast<double>(std::numeric_limits<I>::max())) {
    throw NiftiError("value " + std::to_string(v) + " does not fit datatype " +
                     datatype_name(static_cast<std::int16_t>(
                         std::is_same_v<I, std::uint8_t>   ? DataType::uint8
                         : std::is_same_v<I, std::int16_t> ? DataType::int16
                                                           : DataType::int32)));
  }
  store(p, static_cast<I>(v), Endianness::little);
}

void encode_voxel(std::uint8_t* p, double v, DataType type) {
  switch (type) {
    case DataType::uint8:
      encode_integer<std::uint8_t>(p, v);
      return;
    case DataType::int16:
      encode_integer<std::int16_t>(p, v);
      return;
    case DataType::int32:
      encode_integer<std::int32_t>(p, v);
      return;
    case DataType::float32:
      if (!std::isfinite(v) || std::abs(v) > std::numeric_limits<float>::max()) {
        throw NiftiError("value " + std::to_string(v) + " does not fit datatype float32");
      }
      store(p, static_cast<float>(v), Endianness::little);
      return;
    case DataType::float64:
      if (!std::isfinite(v)) throw NiftiError("non-finite voxel value");
      store(p, v, Endianness::little);
      return;
  }
}

}  // namespace

std::string datatype_name(std::int16_t code) {
  switch (code) {
    case 2:
      return "uint8";
    case 4:
      return "int16";
    case 8:
      return "int32";
    case 16:
      return "float32";
    case 64:
      return "float64";
    default:
      return "unknown";
  }
}

int datatype_bits(std::int16_t code) {
  switch (static_cast<DataType>(code)) {
    case DataType::uint8:
      return 8;
    case DataType::int16:
      return 16;
    case DataType::int32:
      return 32;
    case DataType::float32:
      return 32;
    case DataType::float64:
      return 64;
  }
  throw NiftiError("unsupported datatype code " + std::to_string(code));
}

std::array<std::size_t, 3> Header::extents3() const {
  std::array<std::size_t, 3> e{1, 1, 1};
  const int rank = std::clamp<int>(dim[0], 0, 7);
  for (int i = 0; i < 3; ++i) {
    if (i < rank) e[i] = static_cast<std::size_t>(std::max<std::int16_t>(dim[i + 1], 0));
  }
  return e;
}

double Header::effective_slope() const { return scl_slope == 0.0f ? 1.0 : scl_slope; }

Volume::Volume(std::size_t nx, std::size_t ny, std::size_t nz, double fill)
    : header(make_header(nx, ny, nz)), extents_{nx, ny, nz}, voxels_(nx * ny * nz, fill) {}

Header Volume::make_header(std::size_t nx, std::size_t ny, std::size_t nz, DataType type) {
  Header h;
  h.dim = {3, static_cast<std::int16_t>(nx), static_cast<std::int16_t>(ny),
           static_cast<std::int16_t>(nz), 1, 1, 1, 1};
  h.pixdim = {1, 1, 1, 1, 0, 0, 0, 0};
  h.datatype = static_cast<std::int16_t>(type);
  h.bitpix = static_cast<std::int16_t>(datatype_bits(h.datatype));
  h.xyzt_units = 2;  // millimetres
  return h;
}

bool is_gzip(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  if (deflateInit2(&zs, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw NiftiError("gzip: deflateInit2 failed");
  }
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(bytes.size())) + 32);
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw NiftiError("gzip: deflate failed");
  out.resize(zs.total_out);
  return out;
}

std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw NiftiError("gzip: inflateInit2 failed");
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk;
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw NiftiError("gzip: corrupt or truncated stream");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw NiftiError("gzip: truncated stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

std::array<std::uint8_t, kHeaderSize> encode_header(const Header& header) {
  return encode_with(header, Endianness::little);
}

std::array<std::uint8_t, kHeaderSize> byte_swap_header(
    const std::array<std::uint8_t, kHeaderSize>& little) {
  Header h;
  std::array<std::uint8_t, kHeaderSize> copy = little;
  for_each_field(h, FieldCodec(copy.data(), Endianness::little, false));
  return encode_with(h, Endianness::big);
}

Header read_header(std::span<const std::uint8_t> bytes) {
  std::vector<std::uint8_t> inflated;
  if (is_gzip(bytes)) {
    inflated = gzip_decompress(bytes);
    bytes = inflated;
  }
  if (bytes.size() < static_cast<std::size_t>(kHeaderSize)) {
    throw NiftiError("truncated header: " + std::to_string(bytes.size()) + " of " +
                     std::to_string(kHeaderSize) + " bytes");
  }
  Endianness e;
  if (load<std::int32_t>(bytes.data(), Endianness::little) == kHeaderSize) {
    e = Endianness::little;
  } else if (load<std::int32_t>(bytes.data(), Endianness::big) == kHeaderSize) {
    e = Endianness::big;
  } else {
    throw NiftiError("not a NIfTI-1 file: sizeof_hdr is not 348 in either byte order");
  }
  Header h;
  std::array<std::uint8_t, kHeaderSize> raw;
  std::copy_n(bytes.begin(), kHeaderSize, raw.begin());
  for_each_field(h, FieldCodec(raw.data(), e, false));
  h.endianness = e;

  const std::string magic(h.magic.data(), 3);
  if (magic == "ni1") {
    throw NiftiError("unsupported: two-file (.hdr/.img) NIfTI pair, magic \"ni1\"");
  }
  if (magic != "n+1" || h.magic[3] != '\0') {
    throw NiftiError("unsupported magic, expected \"n+1\"");
  }
  if (h.dim[0] < 1 || h.dim[0] > 7) {
    throw NiftiError("invalid dim[0] " + std::to_string(h.dim[0]));
  }
  if (is_supported(h.datatype) && h.bitpix != datatype_bits(h.datatype)) {
    throw NiftiError("bitpix " + std::to_string(h.bitpix) + " inconsistent with datatype " +
                     datatype_name(h.datatype));
  }
  if (h.vox_offset < kSingleFileOffset) {
    throw NiftiError("vox_offset " + std::to_string(h.vox_offset) +
                     " below 352 for a single-file image");
  }
  return h;
}

Volume decode_volume(std::span<const std::uint8_t> bytes) {
  std::vector<std::uint8_t> inflated;
  if (is_gzip(bytes)) {
    inflated = gzip_decompress(bytes);
    bytes = inflated;
  }
  Header h = read_header(bytes);
  if (!is_supported(h.datatype)) {
    throw NiftiError("unsupported datatype code " + std::to_string(h.datatype));
  }
  for (int i = 4; i <= h.dim[0]; ++i) {
    if (h.dim[i] > 1) {
      throw NiftiError("only 3-D volumes are supported; dim[" + std::to_string(i) +
                       "] = " + std::to_string(h.dim[i]));
    }
  }
  const auto ext = h.extents3();
  const std::size_t count = ext[0] * ext[1] * ext[2];
  const std::size_t bpv = static_cast<std::size_t>(h.bitpix / 8);
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  if (bytes.size() < offset || bytes.size() - offset < count * bpv) {
    throw NiftiError("payload too short: need " + std::to_string(count * bpv) +
                     " bytes after offset " + std::to_string(offset) + ", have " +
                     std::to_string(bytes.size() > offset ? bytes.size() - offset : 0));
  }
  Volume v(ext[0], ext[1], ext[2]);
  v.header = h;
  const double slope = h.effective_slope();
  const double inter = h.scl_inter;
  const bool identity = slope == 1.0 && inter == 0.0;
  auto out = v.voxels();
  const std::uint8_t* p = bytes.data() + offset;
  for (std::size_t i = 0; i < count; ++i, p += bpv) {
    const double raw = decode_voxel(p, h.datatype, h.endianness);
    out[i] = identity ? raw : raw * slope + inter;
    if (!std::isfinite(out[i])) {
      throw NiftiError("non-finite voxel at index " + std::to_string(i));
    }
  }
  return v;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NiftiError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw NiftiError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw NiftiError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Volume read_volume(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_volume(bytes);
  } catch (const NiftiError& e) {
    throw NiftiError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_volume(const Volume& volume, DataType type) {
  Header h = volume.header;
  h.sizeof_hdr = kHeaderSize;
  h.dim[0] = 3;
  for (int i = 0; i < 3; ++i) {
    if (volume.extents()[i] > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max())) {
      throw NiftiError("extent too large for NIfTI-1");
    }
    h.dim[i + 1] = static_cast<std::int16_t>(volume.extents()[i]);
  }
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = static_cast<std::int16_t>(type);
  h.bitpix = static_cast<std::int16_t>(datatype_bits(h.datatype));
  h.vox_offset = kSingleFileOffset;
  h.scl_slope = 1;
  h.scl_inter = 0;
  h.magic = {'n', '+', '1', '\0'};

  const std::size_t bpv = static_cast<std::size_t>(h.bitpix / 8);
  std::vector<std::uint8_t> out(kSingleFileOffset + volume.size() * bpv, 0);
  const auto hdr = encode_header(h);
  std::copy(hdr.begin(), hdr.end(), out.begin());
  std::uint8_t* p = out.data() + kSingleFileOffset;
  for (const double v : volume.voxels()) {
    encode_voxel(p, v, type);
    p += bpv;
  }
  return out;
}

void write_volume(const Volume& volume, const std::filesystem::path& path, DataType type) {
  auto bytes = encode_volume(volume, type);
  if (path.extension() == ".gz") bytes = gzip_compress(bytes);
  write_file_atomic(path, bytes);
}

}  // namespace cunet::nifti
