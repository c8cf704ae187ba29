#include "cunet/cli/app.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "cunet/cli/synth.hpp"
#include "cunet/dataset/dataset.hpp"
#include "cunet/error.hpp"
#include "cunet/model/checkpoint.hpp"
#include "cunet/training/trainer.hpp"

namespace cunet::cli {
namespace fs = std::filesystem;

namespace {

// Writes a line to the console and, when open, to the run log.
class Log {
 public:
  explicit Log(std::ostream& out) : out_(out) {}
  void open(const fs::path& path) { file_.open(path, std::ios::app); }
  void line(const std::string& text) {
    out_ << text << '\n';
    out_.flush();
    if (file_) file_ << text << '\n' << std::flush;
  }
  // the console copy of errors is printed by run()
  void file_only(const std::string& text) {
    if (file_) file_ << text << '\n' << std::flush;
  }

 private:
  std::ostream& out_;
  std::ofstream file_;
};

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

model::CUNetConfig profile(const std::string& name) {
  if (name == "desk") return model::CUNetConfig::desk();
  if (name == "paper") return model::CUNetConfig::paper();
  throw ConfigError("unknown profile \"" + name + "\" (expected desk or paper)");
}

// ---------------------------------------------------------------- train

struct TrainFlags {
  std::string config, data, out = "run", profile, policy;
  std::uint64_t seed = 0;
  std::size_t epochs = 0, batch_size = 0;
  double lr = 0, momentum = 0, threshold = 0;
  int precision = 32;
  CLI::Option *seed_opt, *epochs_opt, *batch_opt, *lr_opt, *momentum_opt, *threshold_opt,
      *precision_opt, *data_opt;
};

void add_train(CLI::App& app, TrainFlags& f) {
  app.add_option("--config", f.config, "key=value config file (a previous manifest works)");
  f.data_opt = app.add_option("--data", f.data, "dataset root");
  app.add_option("--out", f.out, "run directory")->capture_default_str();
  app.add_option("--profile", f.profile, "model size: desk or paper");
  f.seed_opt = app.add_option("--seed", f.seed, "seed for split, init and shuffling");
  f.epochs_opt = app.add_option("--epochs", f.epochs);
  f.batch_opt = app.add_option("--batch-size", f.batch_size);
  f.lr_opt = app.add_option("--lr", f.lr);
  f.momentum_opt = app.add_option("--momentum", f.momentum);
  f.threshold_opt = app.add_option("--threshold", f.threshold);
  f.precision_opt = app.add_option("--precision", f.precision, "32 or 64");
  app.add_option("--policy", f.policy, "training slices: nonempty or all");
}

struct LoadedFolds {
  std::vector<data::SliceSample> train;
  std::vector<train::EvalSubject> val;
  std::vector<train::EvalSubject> test;
};

void train_run(const train::TrainConfig& cfg, const std::string& data_root,
               const fs::path& run_dir, Log& log, std::ostream& err);

int cmd_train(const TrainFlags& f, std::ostream& out, std::ostream& err) {
  // defaults < config file < flags
  model::KeyValues kv;
  std::string data_root = f.data;
  if (!f.config.empty()) {
    kv = model::parse_key_values(read_text(f.config));
    if (!f.data_opt->count() && kv.count("run.data")) data_root = kv.at("run.data");
    for (auto it = kv.begin(); it != kv.end();) {
      it = it->first.rfind("run.", 0) == 0 ? kv.erase(it) : std::next(it);
    }
  }
  train::TrainConfig cfg = train::TrainConfig::from_key_values(kv);
  if (!f.profile.empty()) {
    const auto p = profile(f.profile);
    cfg.model.base_channels = p.base_channels;
    cfg.model.depth = p.depth;
  }
  if (f.seed_opt->count()) cfg.seed = f.seed;
  if (f.epochs_opt->count()) cfg.epochs = f.epochs;
  if (f.batch_opt->count()) cfg.batch_size = f.batch_size;
  if (f.lr_opt->count()) cfg.lr = f.lr;
  if (f.momentum_opt->count()) cfg.momentum = f.momentum;
  if (f.threshold_opt->count()) cfg.threshold = f.threshold;
  if (f.precision_opt->count()) cfg.precision = f.precision;
  if (!f.policy.empty()) cfg.slice_policy = data::parse_policy(f.policy);
  cfg.validate();
  if (data_root.empty()) throw ConfigError("--data is required (or run.data in --config)");

  const fs::path run_dir = f.out;
  fs::create_directories(run_dir);
  Log log(out);
  log.open(run_dir / kLogFile);
  try {
    train_run(cfg, data_root, run_dir, log, err);
  } catch (const std::exception& e) {
    log.file_only(std::string("error: ") + e.what());
    throw;
  }
  return kExitOk;
}

void train_run(const train::TrainConfig& cfg, const std::string& data_root,
               const fs::path& run_dir, Log& log, std::ostream& err) {
  const auto found = data::discover_subjects(data_root);
  for (const auto& w : found.warnings) {
    err << "warning: " << w << '\n';
    log.file_only("warning: " + w);
  }
  const auto split = data::split_subjects(found.subjects, cfg.seed);
  split.write(run_dir / kSplitFile);

  model::KeyValues manifest = cfg.to_key_values();
  manifest["run.checkpoint"] = (run_dir / kCheckpointFile).string();
  manifest["run.data"] = data_root;
  manifest["run.report"] = (run_dir / kReportFile).string();
  manifest["run.split"] = (run_dir / kSplitFile).string();
  manifest["run.version"] = kVersion;
  write_text(run_dir / kManifestFile, model::format_key_values(manifest));

  const std::size_t multiple = train::slice_multiple(cfg.model);
  LoadedFolds folds;
  for (const auto& rec : found.subjects) {
    const data::Fold fold = split.membership.at(rec.id);
    if (fold == data::Fold::test) continue;
    const auto vols = data::load_subject(rec);
    if (fold == data::Fold::train) {
      auto s = data::extract_slices(vols, cfg.slice_policy, cfg.seed, multiple);
      folds.train.insert(folds.train.end(), std::make_move_iterator(s.begin()),
                         std::make_move_iterator(s.end()));
    } else {
      folds.val.push_back(train::make_eval_subject(vols, multiple));
    }
  }
  log.line("subjects: " + std::to_string(split.size(data::Fold::train)) + " train, " +
           std::to_string(split.size(data::Fold::val)) + " val, " +
           std::to_string(split.size(data::Fold::test)) + " test; " +
           std::to_string(folds.train.size()) + " training slices");

  std::string stats = "epoch\ttrain_bce\tval_dice\n";
  std::string timing = "epoch\tseconds\n";
  write_text(run_dir / kStatsFile, stats);
  write_text(run_dir / kTimingFile, timing);
  train::TrainHooks hooks;
  hooks.on_improve = [&](const model::Checkpoint& ck) {
    model::save_checkpoint(ck, run_dir / kCheckpointFile);
  };
  hooks.on_epoch = [&](const train::EpochStats& s) {
    stats += std::to_string(s.epoch) + '\t' + exact(s.mean_train_bce) + '\t' + exact(s.val_dice) + '\n';
    timing += std::to_string(s.epoch) + '\t' + fixed(s.wall_seconds, 3) + '\n';
    write_text(run_dir / kStatsFile, stats);
    write_text(run_dir / kTimingFile, timing);
    log.line("epoch " + std::to_string(s.epoch) + "/" + std::to_string(cfg.epochs) +
             "  bce " + fixed(s.mean_train_bce, 4) + "  val dice " + fixed(s.val_dice, 4) + "  " +
             fixed(s.wall_seconds, 1) + "s");
  };
  const auto result = train::run_training(cfg, folds.train, folds.val, hooks);
  const std::size_t best = train::select_best(result.history);
  log.line("best epoch " + std::to_string(best) + "  val dice " +
           fixed(result.history[best - 1].val_dice, 4) + "  -> " +
           (run_dir / kCheckpointFile).string());
}

// ------------------------------------------------------------- evaluate

struct EvalFlags {
  std::string checkpoint, data, split, fold = "test", out;
  double threshold = 0.5;
  bool force = false;
  CLI::Option* threshold_opt;
};

void add_evaluate(CLI::App& app, EvalFlags& f) {
  app.add_option("--checkpoint", f.checkpoint)->required();
  app.add_option("--data", f.data, "dataset root")->required();
  app.add_option("--split", f.split, "split manifest (default: split.txt beside the checkpoint)");
  app.add_option("--fold", f.fold, "test, val or train")->capture_default_str();
  app.add_option("--out", f.out, "report directory (default: the checkpoint's directory)");
  f.threshold_opt = app.add_option("--threshold", f.threshold);
  app.add_flag("--force", f.force, "allow scoring the training fold");
}

int cmd_evaluate(const EvalFlags& f, std::ostream& out, std::ostream& err) {
  data::Fold fold;
  try {
    fold = data::parse_fold(f.fold);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (fold == data::Fold::train && !f.force) {
    err << "error: refusing to evaluate on the training fold (scores would be optimistic); "
           "pass --force to do it anyway\n";
    return kExitUsage;
  }
  const auto ckpt = model::read_checkpoint(f.checkpoint);
  const auto tcfg = train::TrainConfig::from_text(ckpt.meta.train_config);
  const double threshold = f.threshold_opt->count() ? f.threshold : tcfg.threshold;

  const auto found = data::discover_subjects(f.data);
  for (const auto& w : found.warnings) err << "warning: " << w << '\n';
  fs::path split_path = f.split.empty() ? fs::path(f.checkpoint).parent_path() / kSplitFile : fs::path(f.split);
  data::SplitSpec split;
  if (fs::exists(split_path)) {
    split = data::SplitSpec::read(split_path);
  } else if (!f.split.empty()) {
    throw DataError("split manifest " + split_path.string() + " not found");
  } else {
    split = data::split_subjects(found.subjects, ckpt.meta.seed);
  }

  const std::size_t multiple = train::slice_multiple(ckpt.config);
  std::vector<train::EvalSubject> subjects;
  for (const auto& rec : found.subjects) {
    const auto it = split.membership.find(rec.id);
    if (it == split.membership.end() || it->second != fold) continue;
    subjects.push_back(train::make_eval_subject(data::load_subject(rec), multiple));
  }
  if (subjects.empty()) {
    throw DataError(std::string("no subjects of the ") + std::string(data::fold_name(fold)) +
                    " fold found under " + f.data);
  }
  const auto report = train::evaluate_subjects(ckpt, subjects, threshold, tcfg.batch_size);
  out << report.to_text(4);
  const fs::path dir = f.out.empty() ? fs::path(f.checkpoint).parent_path() : fs::path(f.out);
  if (!dir.empty()) fs::create_directories(dir);
  write_text(dir / kReportFile, report.to_text(6));
  return kExitOk;
}

// -------------------------------------------------------------- predict

struct PredictFlags {
  std::string checkpoint, subject, out = "prediction";
  double threshold = 0.5;
  bool overlay = false;
  CLI::Option* threshold_opt;
};

void add_predict(CLI::App& app, PredictFlags& f) {
  app.add_option("--checkpoint", f.checkpoint)->required();
  app.add_option("--subject", f.subject, "one subject directory")->required();
  app.add_option("--out", f.out)->capture_default_str();
  f.threshold_opt = app.add_option("--threshold", f.threshold);
  app.add_flag("--overlay", f.overlay, "also write a PPM per slice with predicted tumour");
}

int cmd_predict(const PredictFlags& f, std::ostream& out) {
  const auto ckpt = model::read_checkpoint(f.checkpoint);
  const auto tcfg = train::TrainConfig::from_text(ckpt.meta.train_config);
  const double threshold = f.threshold_opt->count() ? f.threshold : tcfg.threshold;
  const auto rec = data::subject_from_dir(f.subject, false);
  const auto vols = data::load_subject(rec);
  const auto mask = train::predict_volume(ckpt, vols, threshold, tcfg.batch_size);

  fs::create_directories(f.out);
  const fs::path mask_path = fs::path(f.out) / (rec.id + "_pred.nii.gz");
  nifti::write_volume(mask, mask_path, nifti::DataType::uint8);
  std::size_t voxels = 0;
  for (double v : mask.voxels()) voxels += v > 0;
  out << mask_path.string() << "  (" << voxels << " tumour voxels)\n";

  if (f.overlay) {
    const fs::path dir = fs::path(f.out) / "overlay";
    fs::create_directories(dir);
    const auto flair = nifti::read_volume(rec.modality_paths[3]);
    const nifti::Volume* truth = vols.mask ? &*vols.mask : nullptr;
    std::size_t written = 0;
    for (std::size_t z = 0; z < mask.nz(); ++z) {
      bool any = false;
      for (std::size_t y = 0; y < mask.ny() && !any; ++y)
        for (std::size_t x = 0; x < mask.nx() && !any; ++x) any = mask.at(x, y, z) > 0;
      if (!any) continue;
      char name[64];
      std::snprintf(name, sizeof name, "_z%03zu.ppm", z);
      write_overlay_ppm(dir / (rec.id + name), flair, mask, truth, z);
      ++written;
    }
    out << written << " overlay images in " << dir.string() << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------- synth

struct SynthFlags {
  std::string out = "synth", size = "64x64x16";
  std::size_t subjects = 12;
  std::uint64_t seed = 1;
  bool plain = false;
};

void add_synth(CLI::App& app, SynthFlags& f) {
  app.add_option("--out", f.out, "dataset root to create")->capture_default_str();
  app.add_option("--subjects", f.subjects)->capture_default_str();
  app.add_option("--size", f.size, "volume extents XxYxZ")->capture_default_str();
  app.add_option("--seed", f.seed)->capture_default_str();
  app.add_flag("--plain", f.plain, "write .nii instead of .nii.gz");
}

int cmd_synth(const SynthFlags& f, std::ostream& out) {
  synth::SynthOptions o;
  o.subjects = f.subjects;
  o.seed = f.seed;
  o.gzip = !f.plain;
  std::size_t a = 0, b = 0, c = 0;
  char x1 = 0, x2 = 0, extra = 0;
  std::istringstream is(f.size);
  if (!(is >> a >> x1 >> b >> x2 >> c) || x1 != 'x' || x2 != 'x' || (is >> extra)) {
    throw ConfigError("--size must look like 64x64x16, got \"" + f.size + "\"");
  }
  o.nx = a;
  o.ny = b;
  o.nz = c;
  const auto ids = synth::write_synthetic_dataset(f.out, o);
  out << ids.size() << " subjects written to " << f.out << '\n';
  return kExitOk;
}

// -------------------------------------------------------------- inspect

int cmd_inspect(const std::string& path, std::ostream& out) {
  const auto bytes = nifti::read_file(path);
  const auto vol = nifti::decode_volume(bytes);
  const auto& h = vol.header;
  auto text = [](const auto& arr) {
    std::string s(arr.begin(), arr.end());
    return s.substr(0, s.find('\0'));
  };
  out << "file          " << path << (nifti::is_gzip(bytes) ? " (gzip)" : "") << '\n';
  out << "byte order    " << (h.endianness == nifti::Endianness::little ? "little" : "big") << "-endian\n";
  out << "sizeof_hdr    " << h.sizeof_hdr << '\n';
  out << "dim           [";
  for (std::size_t i = 0; i < 8; ++i) out << (i ? ", " : "") << h.dim[i];
  out << "]\n";
  const auto e = vol.extents();
  out << "extents       (" << e[0] << "," << e[1] << "," << e[2] << ")\n";
  out << "datatype      " << h.datatype << " ("
      << nifti::datatype_name(h.datatype) << ")\n";
  out << "bitpix        " << h.bitpix << '\n';
  out << "pixdim        [";
  for (std::size_t i = 0; i < 8; ++i) out << (i ? ", " : "") << h.pixdim[i];
  out << "]\n";
  out << "vox_offset    " << h.vox_offset << '\n';
  out << "scl_slope     " << h.scl_slope << '\n';
  out << "scl_inter     " << h.scl_inter << '\n';
  out << "qform/sform   " << h.qform_code << " / " << h.sform_code << '\n';
  out << "descrip       \"" << text(h.descrip) << "\"\n";
  out << "magic         \"" << text(h.magic) << "\"\n";
  double lo = 0, hi = 0;
  std::size_t nonzero = 0;
  if (vol.size()) {
    const auto [mn, mx] = std::minmax_element(vol.voxels().begin(), vol.voxels().end());
    lo = *mn;
    hi = *mx;
  }
  for (double v : vol.voxels()) nonzero += v != 0;
  out << "value range   [" << lo << ", " << hi << "]\n";
  out << "nonzero       " << nonzero << " of " << vol.size() << '\n';
  return kExitOk;
}

}  // namespace

void write_overlay_ppm(const fs::path& path, const nifti::Volume& background,
                       const nifti::Volume& prediction, const nifti::Volume* truth,
                       std::size_t z) {
  const std::size_t nx = background.nx(), ny = background.ny();
  if (prediction.extents() != background.extents() || (truth && truth->extents() != background.extents())) {
    throw DataError("overlay volumes have different extents");
  }
  double lo = 0, hi = 0;
  for (std::size_t y = 0; y < ny; ++y)
    for (std::size_t x = 0; x < nx; ++x) {
      lo = std::min(lo, background.at(x, y, z));
      hi = std::max(hi, background.at(x, y, z));
    }
  auto edge = [&](const nifti::Volume& m, std::size_t x, std::size_t y) {
    if (m.at(x, y, z) <= 0) return false;
    if (x == 0 || y == 0 || x + 1 == nx || y + 1 == ny) return true;
    return m.at(x - 1, y, z) <= 0 || m.at(x + 1, y, z) <= 0 || m.at(x, y - 1, z) <= 0 ||
           m.at(x, y + 1, z) <= 0;
  };
  std::string img = "P6\n" + std::to_string(nx) + " " + std::to_string(ny) + "\n255\n";
  const std::size_t header = img.size();
  img.resize(header + nx * ny * 3);
  // image row 0 is the top, so flip y (voxel y grows anterior)
  for (std::size_t row = 0; row < ny; ++row)
    for (std::size_t x = 0; x < nx; ++x) {
      const std::size_t y = ny - 1 - row;
      const double v = hi > lo ? (background.at(x, y, z) - lo) / (hi - lo) : 0.0;
      unsigned char r = static_cast<unsigned char>(std::lround(255 * v)), g = r, b = r;
      if (truth && edge(*truth, x, y)) r = 0, g = 255, b = 0;
      if (edge(prediction, x, y)) r = 255, g = 0, b = 0;
      char* px = img.data() + header + (row * nx + x) * 3;
      px[0] = static_cast<char>(r);
      px[1] = static_cast<char>(g);
      px[2] = static_cast<char>(b);
    }
  std::ofstream outf(path, std::ios::binary | std::ios::trunc);
  if (!outf) throw DataError("cannot write " + path.string());
  outf.write(img.data(), static_cast<std::streamsize>(img.size()));
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CU-Net brain tumour segmentation", "cunet"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  TrainFlags train_flags;
  EvalFlags eval_flags;
  PredictFlags predict_flags;
  SynthFlags synth_flags;
  std::string inspect_path;

  auto* train_cmd = app.add_subcommand("train", "train on a dataset and keep the best checkpoint");
  add_train(*train_cmd, train_flags);
  auto* eval_cmd = app.add_subcommand("evaluate", "volume Dice of a checkpoint on one fold");
  add_evaluate(*eval_cmd, eval_flags);
  auto* predict_cmd = app.add_subcommand("predict", "predict a tumour mask for one subject");
  add_predict(*predict_cmd, predict_flags);
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  add_synth(*synth_cmd, synth_flags);
  auto* inspect_cmd = app.add_subcommand("inspect", "print a NIfTI header and value range");
  inspect_cmd->add_option("path", inspect_path, ".nii or .nii.gz file")->required();

  std::vector<const char*> argv{"cunet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_flags, out, err);
    if (*eval_cmd) return cmd_evaluate(eval_flags, out, err);
    if (*predict_cmd) return cmd_predict(predict_flags, out);
    if (*synth_cmd) return cmd_synth(synth_flags, out);
    if (*inspect_cmd) return cmd_inspect(inspect_path, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace cunet::cli
