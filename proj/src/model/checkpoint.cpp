#include "cunet/model/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "cunet/error.hpp"

namespace cunet::model {
namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v)); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void bytes(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() { return le<std::uint8_t>(); }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(le<std::uint32_t>()); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string text() { return bytes(u32()); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
CheckpointEntry entry_of(const std::string& name, const Tensor<T>& t) {
  CheckpointEntry e;
  e.name = name;
  e.shape = t.shape();
  e.bits = sizeof(T) * 8;
  e.values.assign(t.data().begin(), t.data().end());
  return e;
}

template <typename T>
void copy_into(const CheckpointEntry& e, Tensor<T> dst) {
  if (e.shape != dst.shape()) {
    throw CheckpointError("parameter shape mismatch: " + e.name + " is " +
                          shape_to_string(e.shape) + " in the checkpoint but " +
                          shape_to_string(dst.shape()) + " in the model");
  }
  auto d = dst.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(e.values[i]);
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes("CUNT");
  w.u32(kCheckpointVersion);
  w.text(ckpt.config.to_text());
  w.i32(ckpt.meta.epoch);
  w.f64(ckpt.meta.val_dice);
  w.u64(ckpt.meta.seed);
  w.text(ckpt.meta.train_config);
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (e.name.size() > 0xffff) throw CheckpointError("entry name too long: " + e.name);
    if (e.bits != 32 && e.bits != 64) throw CheckpointError("entry " + e.name + ": bad width");
    if (e.values.size() != shape_numel(e.shape)) {
      throw CheckpointError("entry " + e.name + ": value count does not match shape");
    }
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name);
    w.u8(e.bits);
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (const auto d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    for (const double v : e.values) {
      if (e.bits == 32) {
        w.f32(static_cast<float>(v));
      } else {
        w.f64(v);
      }
    }
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = crc_of(buf);
  w.u32(crc);
  return std::move(buf);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "CUNT", 4) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  Reader r(bytes);
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.subspan(bytes.size() - 4));
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual = crc_of(body);
  if (stored != actual) throw CheckpointError("checkpoint checksum mismatch (file is corrupted)");

  Reader b(body);
  b.bytes(8);
  Checkpoint ck;
  ck.config = CUNetConfig::from_text(b.text());
  ck.meta.epoch = b.i32();
  ck.meta.val_dice = b.f64();
  ck.meta.seed = b.u64();
  ck.meta.train_config = b.text();
  const std::uint32_t count = b.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = b.bytes(b.u16());
    e.bits = b.u8();
    if (e.bits != 32 && e.bits != 64) {
      throw CheckpointError("entry " + e.name + ": unsupported width " + std::to_string(e.bits));
    }
    const std::size_t rank = b.u8();
    for (std::size_t d = 0; d < rank; ++d) e.shape.push_back(b.u32());
    const std::size_t n = shape_numel(e.shape);
    e.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) e.values[k] = e.bits == 32 ? double(b.f32()) : b.f64();
    ck.entries.push_back(std::move(e));
  }
  if (b.pos() != body.size()) throw CheckpointError("trailing bytes after checkpoint entries");
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template <typename T>
Checkpoint snapshot(const CUNet<T>& model, const CheckpointMeta& meta) {
  Checkpoint ck;
  ck.config = model.config();
  ck.meta = meta;
  for (const auto& p : model.parameters()) ck.entries.push_back(entry_of(p.name, p.tensor));
  for (const auto& n : model.norms()) {
    ck.entries.push_back(entry_of(n.name + ".running_mean", n.state.running_mean));
    ck.entries.push_back(entry_of(n.name + ".running_var", n.state.running_var));
  }
  return ck;
}

template <typename T>
void restore(CUNet<T>& model, const Checkpoint& ckpt) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : ckpt.entries) {
    if (!by_name.emplace(e.name, &e).second) throw CheckpointError("duplicate entry " + e.name);
  }
  auto take = [&](const std::string& name) -> const CheckpointEntry& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint is missing parameter " + name);
    const CheckpointEntry& e = *it->second;
    by_name.erase(it);
    return e;
  };
  // check everything before touching the model
  std::vector<std::pair<const CheckpointEntry*, Tensor<T>>> plan;
  for (auto& p : model.parameters()) plan.emplace_back(&take(p.name), p.tensor);
  for (auto& n : model.norms()) {
    plan.emplace_back(&take(n.name + ".running_mean"), n.state.running_mean);
    plan.emplace_back(&take(n.name + ".running_var"), n.state.running_var);
  }
  if (!by_name.empty()) {
    throw CheckpointError("checkpoint has unexpected entry " + by_name.begin()->first);
  }
  for (const auto& [e, t] : plan) {
    if (e->shape != t.shape()) copy_into(*e, t);  // throws the mismatch
  }
  for (const auto& [e, t] : plan) copy_into(*e, t);
}

template <typename T>
CUNet<T> model_from_checkpoint(const Checkpoint& ckpt) {
  CUNet<T> model(ckpt.config, 0);
  restore(model, ckpt);
  return model;
}

template Checkpoint snapshot<float>(const CUNet<float>&, const CheckpointMeta&);
template Checkpoint snapshot<double>(const CUNet<double>&, const CheckpointMeta&);
template void restore<float>(CUNet<float>&, const Checkpoint&);
template void restore<double>(CUNet<double>&, const Checkpoint&);
template CUNet<float> model_from_checkpoint<float>(const Checkpoint&);
template CUNet<double> model_from_checkpoint<double>(const Checkpoint&);

}  // namespace cunet::model
