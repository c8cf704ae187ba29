// Acceptance driver: one PASS/FAIL line per criterion, exit status 1 if
// any criterion fails. Pass criterion numbers to run a subset.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>

#include "../test_util.hpp"
#include "cunet/cli/app.hpp"
#include "cunet/cli/synth.hpp"
#include "cunet/dataset/dataset.hpp"
#include "cunet/error.hpp"
#include "cunet/metrics/dice.hpp"
#include "cunet/model/checkpoint.hpp"
#include "cunet/model/cunet.hpp"
#include "cunet/nifti/nifti.hpp"
#include "cunet/training/trainer.hpp"

using namespace cunet;
using cunet::testing::gradient_check;
using cunet::testing::random_tensor;
using cunet::testing::weighted_sum;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a failed check; the first one ends up in the detail line.
  void check(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "cunet_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ------------------------------------------------------------------ 1

constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;

Outcome gradient_correctness() {
  Outcome o;
  double worst = 0;
  std::size_t compared = 0, skipped = 0;
  auto record = [&](const cunet::testing::GradCheckResult& r, const std::string& what) {
    worst = std::max(worst, r.relative_error);
    compared += r.coordinates;
    skipped += r.skipped;
    o.check(r.relative_error < kGradTol, what + ": relative error " + fmt("%.3g", r.relative_error));
    o.check(r.coordinates > 0 && r.analytic_norm > 0, what + ": nothing was compared");
    o.check(r.skipped * 10 <= r.coordinates + r.skipped, what + ": too many kink crossings");
  };

  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const std::string s = " seed " + std::to_string(seed);
    Rng rng(1000 + seed);
    {
      auto x = random_tensor<double>({2, 3, 7, 6}, rng, 1.0, true);
      auto w = random_tensor<double>({4, 3, 3, 3}, rng, 1.0, true);
      auto b = random_tensor<double>({4}, rng, 1.0, true);
      const ops::Conv2dOptions opt{1 + seed % 2, seed % 3 == 0 ? 0u : 1u};
      const auto probe = ops::conv2d(x, w, b, opt);
      const auto r = random_tensor<double>(probe.shape(), rng);
      record(gradient_check<double>(
                 [&](Tape<double>* t) { return weighted_sum(ops::conv2d(x, w, b, opt, t), r, t); },
                 {x, w, b}, rng, kGradStep),
             "conv2d" + s);
    }
    {
      auto x = random_tensor<double>({2, 2, 4, 6}, rng, 1.0, true);
      auto r = random_tensor<double>({2, 2, 2, 3}, rng);
      record(gradient_check<double>(
                 [&](Tape<double>* t) { return weighted_sum(ops::maxpool2d(x, t), r, t); }, {x}, rng,
                 kGradStep),
             "maxpool2d" + s);
    }
    {
      auto x = random_tensor<double>({2, 2, 3, 2}, rng, 1.0, true);
      auto r = random_tensor<double>({2, 2, 6, 4}, rng);
      record(gradient_check<double>(
                 [&](Tape<double>* t) { return weighted_sum(ops::upsample_nn2d(x, t), r, t); }, {x},
                 rng, kGradStep),
             "upsample_nn2d" + s);
    }
    for (auto mode : {ops::Mode::train, ops::Mode::eval}) {
      auto x = random_tensor<double>({3, 2, 3, 3}, rng, 1.0, true);
      auto g = random_tensor<double>({2}, rng, 1.0, true);
      auto b = random_tensor<double>({2}, rng, 1.0, true);
      auto r = random_tensor<double>({3, 2, 3, 3}, rng);
      ops::BatchNormState<double> state(2);
      state.running_mean[0] = 0.25;
      state.running_var[1] = 1.75;
      record(gradient_check<double>(
                 [&](Tape<double>* t) {
                   return weighted_sum(ops::batchnorm2d(x, g, b, state, mode, t), r, t);
                 },
                 {x, g, b}, rng, kGradStep),
             std::string("batchnorm2d ") + (mode == ops::Mode::train ? "train" : "eval") + s);
    }
    {
      auto x = random_tensor<double>({2, 3, 4}, rng, 1.0, true);
      auto r = random_tensor<double>({2, 3, 4}, rng);
      record(gradient_check<double>(
                 [&](Tape<double>* t) { return weighted_sum(ops::relu(x, t), r, t); }, {x}, rng,
                 kGradStep),
             "relu" + s);
      record(gradient_check<double>(
                 [&](Tape<double>* t) { return weighted_sum(ops::sigmoid(x, t), r, t); }, {x}, rng,
                 kGradStep),
             "sigmoid" + s);
    }
    {
      auto a = random_tensor<double>({2, 2, 3, 3}, rng, 1.0, true);
      auto b = random_tensor<double>({2, 1, 3, 3}, rng, 1.0, true);
      auto r = random_tensor<double>({2, 3, 3, 3}, rng);
      record(gradient_check<double>(
                 [&](Tape<double>* t) { return weighted_sum(ops::concat_channels(a, b, t), r, t); },
                 {a, b}, rng, kGradStep),
             "concat" + s);
    }
    {
      Tensor<double> p(Shape{16}, 0.0, true), y(Shape{16});
      for (std::size_t i = 0; i < 16; ++i) {
        p[i] = rng.uniform(0.05, 0.95);
        y[i] = double(rng.below(2));
      }
      record(gradient_check<double>([&](Tape<double>* t) { return ops::bce_loss(p, y, t); }, {p},
                                    rng, kGradStep),
             "bce" + s);
    }
    {
      model::CUNetConfig toy;
      toy.base_channels = 8;
      toy.depth = 2;
      model::CUNet<double> net(toy, seed);
      const auto x = random_tensor<double>(Shape{2, 4, 16, 16}, rng, 1.0, true);
      Tensor<double> y(Shape{2, 1, 16, 16});
      for (auto& v : y.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      std::vector<Tensor<double>> wrt{x};
      for (const auto& p : net.parameters()) wrt.push_back(p.tensor);
      record(gradient_check<double>(
                 [&](Tape<double>* t) {
                   return ops::bce_loss(net.forward(x, ops::Mode::train, t), y, t);
                 },
                 wrt, rng, kGradStep, 12),
             "toy CU-Net" + s);
    }
  }
  if (o.pass) {
    o.detail = "9 ops + toy CU-Net x 5 seeds, worst relative error " + fmt("%.2e", worst) + ", " +
               std::to_string(compared) + " coordinates, " + std::to_string(skipped) +
               " skipped at kinks";
  }
  return o;
}

// ------------------------------------------------------------------ 2

Outcome convolution_oracle() {
  Outcome o;
  Rng rng(20240);
  double worst = 0;
  for (int trial = 0; trial < 50 && o.pass; ++trial) {
    const std::size_t n = 1 + rng.below(3), c = 1 + rng.below(6), k = 1 + rng.below(6);
    const std::size_t kh = 1 + rng.below(5), kw = 1 + rng.below(5);
    const std::size_t stride = 1 + rng.below(3), pad = rng.below(3);
    const std::size_t h = kh + rng.below(12), w = kw + rng.below(12);
    const auto x = random_tensor<double>({n, c, h, w}, rng);
    const auto wt = random_tensor<double>({k, c, kh, kw}, rng);
    const auto b = rng.below(2) ? random_tensor<double>({k}, rng) : Tensor<double>();
    const auto y = ops::conv2d(x, wt, b, {stride, pad});
    std::size_t oh = 0, ow = 0;
    const auto ref = cunet::testing::naive_conv2d(x, wt, b, stride, pad, oh, ow);
    const std::string cfg = "config " + std::to_string(trial);
    o.check(y.shape() == Shape({n, k, oh, ow}), cfg + ": output shape differs from oracle");
    if (!o.pass) break;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(y[i] - ref[i]));
    o.check(worst < 1e-6, cfg + ": max abs diff " + fmt("%.3g", worst));
  }
  if (o.pass) o.detail = "50 configurations, max abs diff " + fmt("%.2e", worst);
  return o;
}

// ------------------------------------------------------------------ 3

std::set<std::size_t> ones(const metrics::BinaryMask& m) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) s.insert(i);
  return s;
}

double set_dice(const std::set<std::size_t>& x, const std::set<std::size_t>& y) {
  if (x.empty() && y.empty()) return 1.0;
  std::vector<std::size_t> both;
  std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(both));
  return 2.0 * double(both.size()) / double(x.size() + y.size());
}

metrics::BinaryMask random_mask(Rng& rng, std::size_t n, double p) {
  std::vector<std::uint8_t> v(n);
  for (auto& x : v) x = rng.uniform() < p;
  return metrics::BinaryMask(Shape{n}, std::move(v));
}

Outcome metric_properties() {
  Outcome o;
  Rng rng(3);
  for (int trial = 0; trial < 1000 && o.pass; ++trial) {
    const std::size_t n = 1 + rng.below(48);
    const auto a = random_mask(rng, n, rng.uniform());
    const auto b = random_mask(rng, n, rng.uniform());
    const double d = metrics::dice_score(a, b);
    const std::string t = "pair " + std::to_string(trial);
    o.check(std::abs(d - set_dice(ones(a), ones(b))) <= 1e-15, t + ": differs from set arithmetic");
    o.check(d == metrics::dice_score(b, a), t + ": not symmetric");
    o.check(d >= 0.0 && d <= 1.0, t + ": out of [0, 1]");
    o.check(metrics::dice_score(a, a) == 1.0, t + ": D(A, A) != 1");
  }
  const metrics::BinaryMask empty(Shape{6}, std::vector<std::uint8_t>(6, 0));
  o.check(metrics::dice_score(empty, empty) == 1.0, "both-empty convention");
  // |X| = |Y| = 4, |X and Y| = 2: 2*2/(4+4)
  const metrics::BinaryMask x(Shape{8}, {1, 1, 1, 1, 0, 0, 0, 0});
  const metrics::BinaryMask y(Shape{8}, {0, 0, 1, 1, 1, 1, 0, 0});
  o.check(metrics::dice_score(x, y) == 0.5, "worked example != 0.5");
  if (o.pass) o.detail = "1000 random pairs, symmetry/bounds/identity/empty/worked example";
  return o;
}

// ------------------------------------------------------------------ 4

Outcome bce_values() {
  Outcome o;
  const Tensor<double> half(Shape{1}, 0.5), one(Shape{1}, 1.0), zero(Shape{1}, 0.0);
  const double l = ops::bce_loss(half, one).item();
  const double err = std::abs(l - std::numbers::ln2);
  o.check(err < 1e-9, "BCE(0.5, 1) = " + fmt("%.17g", l));
  double worst = 0;
  for (const auto& p : {zero, one})
    for (const auto& y : {zero, one}) {
      const double v = ops::bce_loss(p, y).item();
      const double vf = ops::bce_loss(p.cast<float>(), y.cast<float>()).item();
      o.check(std::isfinite(v) && std::isfinite(vf), "non-finite loss at the clamp");
      worst = std::max({worst, v, vf});
    }
  if (o.pass) {
    o.detail = "|BCE(0.5,1) - ln 2| = " + fmt("%.1e", err) + ", largest clamped loss " + fmt("%.3f", worst);
  }
  return o;
}

// ------------------------------------------------------------------ 5

// NIfTI-1 multi-byte fields as (offset, width, count), written out from the
// header layout and used to byte-swap without the library.
struct Field {
  std::size_t offset, width, count;
};
constexpr Field kMultiByte[] = {
    {0, 4, 1},    {32, 4, 1},   {36, 2, 1},   {40, 2, 8},   {56, 4, 3},   {68, 2, 4},
    {76, 4, 8},   {108, 4, 3},  {120, 2, 1},  {124, 4, 4},  {140, 4, 2},  {252, 2, 2},
    {256, 4, 6},  {280, 4, 12},
};

std::vector<std::uint8_t> to_big_endian(std::vector<std::uint8_t> bytes, std::size_t voxel_width) {
  for (const auto& f : kMultiByte)
    for (std::size_t i = 0; i < f.count; ++i) {
      auto* p = bytes.data() + f.offset + i * f.width;
      std::reverse(p, p + f.width);
    }
  for (std::size_t i = 352; i + voxel_width <= bytes.size(); i += voxel_width) {
    std::reverse(bytes.begin() + i, bytes.begin() + i + voxel_width);
  }
  return bytes;
}

Outcome nifti_round_trip() {
  Outcome o;
  Rng rng(55);
  const fs::path dir = work_dir() / "nifti";
  fs::create_directories(dir);
  std::size_t files = 0;
  for (const auto type : {nifti::DataType::float32, nifti::DataType::uint8}) {
    const std::string tname = nifti::datatype_name(static_cast<std::int16_t>(type));
    nifti::Volume v(7 + rng.below(9), 5 + rng.below(9), 2 + rng.below(5));
    for (auto& x : v.voxels()) {
      x = type == nifti::DataType::uint8 ? double(rng.below(256)) : double(float(rng.normal() * 1e3));
    }
    v.header.pixdim = {1, 0.9375f, 0.9375f, 3.0f, 0, 0, 0, 0};
    for (const char* ext : {".nii", ".nii.gz"}) {
      const auto path = dir / (tname + ext);
      nifti::write_volume(v, path, type);
      const auto back = nifti::read_volume(path);
      ++files;
      o.check(back.extents() == v.extents(), tname + ext + ": extents changed");
      o.check(back.size() == v.size() &&
                  std::equal(v.voxels().begin(), v.voxels().end(), back.voxels().begin()),
              tname + ext + ": voxels changed");
      o.check(back.header.pixdim[3] == 3.0f, tname + ext + ": spacing changed");
      o.check(nifti::is_gzip(nifti::read_file(path)) == (std::string(ext) == ".nii.gz"),
              tname + ext + ": wrong encoding on disk");
    }
    const auto le = nifti::encode_volume(v, type);
    const auto be = to_big_endian(le, type == nifti::DataType::uint8 ? 1 : 4);
    const auto a = nifti::decode_volume(le), b = nifti::decode_volume(be);
    o.check(b.header.endianness == nifti::Endianness::big, tname + ": big-endian not detected");
    auto hb = b.header;
    hb.endianness = a.header.endianness;
    o.check(hb == a.header, tname + ": swapped header decodes differently");
    o.check(std::equal(a.voxels().begin(), a.voxels().end(), b.voxels().begin(), b.voxels().end()),
            tname + ": swapped payload decodes differently");
  }
  if (o.pass) o.detail = std::to_string(files) + " files bit-exact, byte-swapped decode equivalent";
  return o;
}

// ------------------------------------------------------------------ 6

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("BraTS19_" + std::to_string(1000 + i));
  return ids;
}

Outcome split_protocol() {
  Outcome o;
  const auto s = data::split_ids(make_ids(335), 42);
  const std::size_t tr = s.size(data::Fold::train), va = s.size(data::Fold::val),
                    te = s.size(data::Fold::test);
  o.check(tr == 269 && va == 33 && te == 33,
          "n=335 gave " + std::to_string(tr) + "/" + std::to_string(va) + "/" + std::to_string(te));
  o.check(data::split_ids(make_ids(335), 42).membership == s.membership, "same seed, different split");
  auto reversed = make_ids(335);
  std::reverse(reversed.begin(), reversed.end());
  o.check(data::split_ids(reversed, 42).membership == s.membership, "split depends on input order");
  o.check(data::split_ids(make_ids(335), 43).membership != s.membership, "seed has no effect");

  Rng rng(6);
  for (int trial = 0; trial < 300 && o.pass; ++trial) {
    const std::size_t n = 3 + rng.below(998);
    const auto ids = make_ids(n);
    const auto sp = data::split_ids(ids, rng.below(1u << 30));
    std::set<std::string> seen;
    bool overlap = false;
    for (auto f : {data::Fold::train, data::Fold::val, data::Fold::test})
      for (const auto& id : sp.members(f)) overlap |= !seen.insert(id).second;
    o.check(!overlap, "n=" + std::to_string(n) + ": a subject is in two folds");
    o.check(seen == std::set<std::string>(ids.begin(), ids.end()),
            "n=" + std::to_string(n) + ": folds do not cover the subjects");
    o.check(sp.size(data::Fold::val) == n / 10 && sp.size(data::Fold::test) == n / 10,
            "n=" + std::to_string(n) + ": held-out sizes");
  }
  if (o.pass) o.detail = "269/33/33, reproducible, no leakage over 300 random n";
  return o;
}

// ------------------------------------------------------------------ 7

Outcome single_batch_overfit() {
  Outcome o;
  synth::SynthOptions so;
  so.nx = so.ny = 16;
  so.nz = 8;
  so.seed = 11;
  const auto s = synth::make_synthetic_subject(0, so);
  data::SubjectVolumes v;
  v.id = s.id;
  for (std::size_t m = 0; m < 4; ++m) v.modalities[m] = data::normalize_modality(s.modalities[m]);
  v.mask = data::binarize_mask(s.seg);
  auto slices = data::extract_slices(v, data::SlicePolicy::nonempty, 1, 16);
  std::vector<data::SliceSample> batch;
  for (const auto& sl : slices) {
    double tumour = 0;
    for (float m : sl.mask.data()) tumour += m;
    if (tumour > 0 && batch.size() < 4) batch.push_back(sl);
  }
  o.check(batch.size() == 4, "could not assemble 4 tumour slices");
  if (!o.pass) return o;

  train::TrainConfig cfg;
  cfg.model.base_channels = 8;
  cfg.model.depth = 2;
  cfg.seed = 1;
  const auto trace = train::overfit_single_batch(cfg, batch, 500);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < trace.size() && !hit; ++i)
    if (trace[i] < 0.01) hit = i + 1;
  o.check(hit != 0, "BCE after 500 steps " + fmt("%.4f", trace.back()) + " (start " +
                        fmt("%.4f", trace.front()) + ")");
  if (o.pass) {
    o.detail = "4x4x16x16 batch, BCE " + fmt("%.4f", trace.front()) + " -> below 0.01 at step " +
               std::to_string(hit);
  }
  return o;
}

// ------------------------------------------------------------------ 8, 9

struct EndToEnd {
  bool trained = false;
  fs::path data, run;
  std::string error;
};

int run_cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str() + e.str();
  return code;
}

EndToEnd& end_to_end() {
  static EndToEnd e = [] {
    EndToEnd r;
    r.data = work_dir() / "synth";
    r.run = work_dir() / "run_a";
    std::string log;
    if (run_cli({"synth", "--out", r.data.string(), "--subjects", "12", "--size", "64x64x16", "--seed", "1"},
                &log) != 0) {
      r.error = "synth failed: " + log;
      return r;
    }
    if (run_cli({"train", "--data", r.data.string(), "--profile", "desk", "--epochs", "30", "--seed", "7",
                 "--out", r.run.string()},
                &log) != 0) {
      r.error = "train failed: " + log;
      return r;
    }
    r.trained = true;
    return r;
  }();
  return e;
}

Outcome synthetic_segmentation() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  auto& e = end_to_end();
  o.check(e.trained, e.error);
  if (!o.pass) return o;
  std::string text;
  const int code = run_cli({"evaluate", "--checkpoint", (e.run / cli::kCheckpointFile).string(), "--data",
                            e.data.string(), "--out", (work_dir() / "eval").string()},
                           &text);
  o.check(code == 0, "evaluate failed: " + text);
  if (!o.pass) return o;
  const auto report = metrics::DiceReport::parse(slurp(work_dir() / "eval" / cli::kReportFile));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.check(report.count >= 1, "no held-out subjects");
  o.check(report.mean >= 0.95, "held-out mean volume Dice " + fmt("%.4f", report.mean));
  o.check(secs < 600, "took " + fmt("%.0f", secs) + " s");
  const auto ck = model::read_checkpoint(e.run / cli::kCheckpointFile);
  if (o.pass) {
    o.detail = "held-out Dice " + fmt("%.4f", report.mean) + " over " + std::to_string(report.count) +
               " subject(s), best epoch " + std::to_string(ck.meta.epoch) + ", " + fmt("%.0f", secs) + " s";
  }
  return o;
}

Outcome determinism() {
  Outcome o;
  auto& e = end_to_end();
  o.check(e.trained, e.error);
  if (!o.pass) return o;
  const fs::path second = work_dir() / "run_b";
  std::string log;
  o.check(run_cli({"train", "--data", e.data.string(), "--profile", "desk", "--epochs", "30", "--seed", "7",
                   "--out", second.string()},
                  &log) == 0,
          "second train failed: " + log);
  if (!o.pass) return o;
  for (const char* f : {cli::kCheckpointFile, cli::kStatsFile, cli::kSplitFile}) {
    const auto a = slurp(e.run / f), b = slurp(second / f);
    o.check(!a.empty() && a == b, std::string(f) + " differs between runs");
  }
  if (o.pass) {
    o.detail = "checkpoint (" + std::to_string(fs::file_size(second / cli::kCheckpointFile)) +
               " bytes), stats and split byte-identical across two 30-epoch runs";
  }
  return o;
}

// ------------------------------------------------------------------ 10

template <typename T>
bool same_bits(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

Outcome checkpoint_round_trip() {
  Outcome o;
  model::CUNetConfig cfg = model::CUNetConfig::desk();
  Rng rng(10);
  const auto x = random_tensor<float>(Shape{2, 4, 32, 32}, rng);
  model::CUNet<float> net(cfg, 10);
  // a few train-mode passes so running statistics are not at their defaults
  for (int i = 0; i < 3; ++i) net.forward(random_tensor<float>(Shape{2, 4, 32, 32}, rng), ops::Mode::train);
  const auto before = net.forward(x, ops::Mode::eval);
  const auto path = work_dir() / "roundtrip.cunt";
  model::save_checkpoint(model::snapshot(net, {3, 0.9, 10, "train.seed=10\n"}), path);
  const auto loaded = model::model_from_checkpoint<float>(model::read_checkpoint(path));
  auto reloaded = loaded;
  o.check(same_bits(before, reloaded.forward(x, ops::Mode::eval)), "float32 eval output changed");

  model::CUNet<double> dnet(cfg, 10);
  const auto dx = x.cast<double>();
  dnet.forward(dx, ops::Mode::train);
  const auto dbefore = dnet.forward(dx, ops::Mode::eval);
  auto dloaded = model::model_from_checkpoint<double>(
      model::decode_checkpoint(model::encode_checkpoint(model::snapshot(dnet, {}))));
  o.check(same_bits(dbefore, dloaded.forward(dx, ops::Mode::eval)), "float64 eval output changed");

  const auto bytes = model::encode_checkpoint(model::snapshot(net, {}));
  std::size_t detected = 0, flips = 0;
  for (std::size_t pos = 8; pos < bytes.size(); pos += std::max<std::size_t>(1, bytes.size() / 200)) {
    auto bad = bytes;
    bad[pos] ^= std::uint8_t(1u << (pos % 8));
    ++flips;
    try {
      model::decode_checkpoint(bad);
    } catch (const CheckpointError& e) {
      detected += std::string(e.what()).find("checksum") != std::string::npos;
    }
  }
  o.check(detected == flips, std::to_string(flips - detected) + " of " + std::to_string(flips) +
                                 " corruptions not reported as checksum mismatch");
  if (o.pass) {
    o.detail = "eval outputs bit-identical (f32, f64), " + std::to_string(flips) +
               " single-bit corruptions all caught by checksum";
  }
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> fn;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CU-Net acceptance criteria"};
  std::vector<int> only;
  app.add_option("criteria", only, "criterion numbers to run (default: all)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "gradient correctness", gradient_correctness},
      {2, "convolution oracle", convolution_oracle},
      {3, "metric properties", metric_properties},
      {4, "BCE scalar values", bce_values},
      {5, "NIfTI round trip", nifti_round_trip},
      {6, "split protocol", split_protocol},
      {7, "single-batch overfit", single_batch_overfit},
      {8, "end-to-end synthetic segmentation", synthetic_segmentation},
      {9, "determinism", determinism},
      {10, "checkpoint round trip", checkpoint_round_trip},
  };
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = c.fn();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2d %s: %s [%.1f s]\n", r.pass ? "PASS" : "FAIL", c.id, c.name, r.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !r.pass;
  }
  fs::remove_all(work_dir());
  return failed == 0 ? 0 : 1;
}
