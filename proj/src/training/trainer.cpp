#include "cunet/training/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include "cunet/error.hpp"
#include "cunet/model/cunet.hpp"
#include "cunet/tensor/optim.hpp"

namespace cunet::train {

using model::CUNet;
using model::KeyValues;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must lie in (0, 1)");
  model.validate();
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv = model.to_key_values();
  kv["train.batch_size"] = std::to_string(batch_size);
  kv["train.epochs"] = std::to_string(epochs);
  kv["train.lr"] = model::format_real(lr);
  kv["train.momentum"] = model::format_real(momentum);
  kv["train.precision"] = std::to_string(precision);
  kv["train.seed"] = std::to_string(seed);
  kv["train.slice_policy"] = std::string(data::policy_name(slice_policy));
  kv["train.threshold"] = model::format_real(threshold);
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  static const std::set<std::string> known{
      "train.batch_size", "train.epochs",         "train.lr",         "train.momentum",
      "train.precision",  "train.seed",           "train.slice_policy", "train.threshold",
      "model.base_channels", "model.bn_epsilon",  "model.bn_momentum", "model.convs_per_block",
      "model.depth",      "model.in_channels",    "model.out_channels"};
  for (const auto& [k, v] : kv) {
    if (!known.count(k)) throw ConfigError("unknown config key \"" + k + "\"");
  }
  TrainConfig c;
  c.model = model::CUNetConfig::from_key_values(kv, c.model);
  auto count = [&](const char* key, std::size_t& field) {
    if (!kv.count(key)) return;
    const long long v = model::kv_int(kv, key);
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    field = static_cast<std::size_t>(v);
  };
  count("train.epochs", c.epochs);
  count("train.batch_size", c.batch_size);
  if (kv.count("train.lr")) c.lr = model::kv_real(kv, "train.lr");
  if (kv.count("train.momentum")) c.momentum = model::kv_real(kv, "train.momentum");
  if (kv.count("train.threshold")) c.threshold = model::kv_real(kv, "train.threshold");
  if (kv.count("train.precision")) c.precision = static_cast<int>(model::kv_int(kv, "train.precision"));
  if (kv.count("train.seed")) {
    const std::string& s = kv.at("train.seed");
    std::size_t used = 0;
    try {
      c.seed = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty() || s[0] == '-') {
      throw ConfigError("config key \"train.seed\": \"" + s + "\" is not an unsigned integer");
    }
  }
  if (kv.count("train.slice_policy")) c.slice_policy = data::parse_policy(kv.at("train.slice_policy"));
  return c;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  return from_key_values(model::parse_key_values(text));
}

std::size_t slice_multiple(const model::CUNetConfig& config) {
  return std::max<std::size_t>(data::kPadMultiple, config.input_divisor());
}

EvalSubject make_eval_subject(const data::SubjectVolumes& subject, std::size_t multiple) {
  if (!subject.mask) throw DataError("subject " + subject.id + " has no segmentation to score against");
  EvalSubject e;
  e.id = subject.id;
  const auto ext = subject.modalities[0].extents();
  e.depth = ext[2];
  e.pad_x = data::padding_for(ext[0], multiple);
  e.pad_y = data::padding_for(ext[1], multiple);
  e.slices = data::extract_slices(subject, data::SlicePolicy::all, 0, multiple);
  return e;
}

std::size_t select_best(std::span<const EpochStats> stats) {
  if (stats.empty()) throw Error("select_best: no epochs recorded");
  std::size_t best = 0;
  for (std::size_t i = 1; i < stats.size(); ++i) {
    if (stats[i].val_dice > stats[best].val_dice) best = i;
  }
  return best + 1;
}

namespace {

// Crops a padded [.., H, W] map back to the original extents and applies
// the threshold.
metrics::BinaryMask crop_binarize(std::span<const float> plane, const data::Padding& px,
                                  const data::Padding& py, double threshold) {
  std::vector<std::uint8_t> out(px.original * py.original);
  for (std::size_t y = 0; y < py.original; ++y)
    for (std::size_t x = 0; x < px.original; ++x) {
      out[y * px.original + x] =
          double(plane[(y + py.before) * px.padded + x + px.before]) > threshold;
    }
  return metrics::BinaryMask(Shape{py.original, px.original}, std::move(out));
}

metrics::BinaryMask crop_truth(const Tensor<float>& mask, const data::Padding& px,
                               const data::Padding& py) {
  return crop_binarize(mask.data(), px, py, 0.5);
}

template <typename T>
std::vector<Tensor<float>> infer(CUNet<T>& net, std::span<const data::SliceSample> slices,
                                 std::size_t batch_size) {
  std::vector<Tensor<float>> out;
  out.reserve(slices.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < slices.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(slices.size(), start + batch_size); ++i) idx.push_back(i);
    const auto batch = data::make_batch<T>(slices, idx);
    const auto prob = net.forward(batch.images, ops::Mode::eval);
    const std::size_t plane = prob.numel() / idx.size();
    Shape shape(prob.shape().begin() + 1, prob.shape().end());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::vector<float> v(prob.raw() + k * plane, prob.raw() + (k + 1) * plane);
      out.emplace_back(shape, std::move(v));
    }
  }
  return out;
}

template <typename T>
metrics::DiceReport score(CUNet<T>& net, std::span<const EvalSubject> subjects, double threshold,
                          std::size_t batch_size) {
  std::vector<metrics::SubjectDice> rows;
  double slice_mean_sum = 0;
  for (const auto& s : subjects) {
    const auto probs = infer(net, s.slices, batch_size);
    std::vector<metrics::SliceMasks> masks;
    masks.reserve(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      masks.push_back({s.slices[i].z, crop_binarize(probs[i].data(), s.pad_x, s.pad_y, threshold),
                       crop_truth(s.slices[i].mask, s.pad_x, s.pad_y)});
    }
    rows.push_back({s.id, metrics::volume_dice(masks, s.depth)});
    slice_mean_sum += metrics::mean_slice_dice(masks);
  }
  const double slice_mean = subjects.empty() ? 0.0 : slice_mean_sum / double(subjects.size());
  return metrics::DiceReport::from(std::move(rows), slice_mean);
}

template <typename T>
std::string norm_report(const CUNet<T>& net) {
  std::vector<std::pair<double, std::string>> norms;
  std::ostringstream bad;
  for (const auto& p : net.parameters()) {
    double s = 0;
    for (const T v : p.tensor.data()) s += double(v) * double(v);
    const double n = std::sqrt(s);
    if (!std::isfinite(n)) bad << ' ' << p.name;
    norms.emplace_back(n, p.name);
  }
  std::sort(norms.begin(), norms.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::ostringstream os;
  os << "largest parameter norms:";
  for (std::size_t i = 0; i < std::min<std::size_t>(3, norms.size()); ++i) {
    os << ' ' << norms[i].second << '=' << norms[i].first;
  }
  if (!bad.str().empty()) os << "; non-finite:" << bad.str();
  return os.str();
}

template <typename T>
TrainResult train_impl(const TrainConfig& config, std::span<const data::SliceSample> train,
                       std::span<const EvalSubject> val, const TrainHooks& hooks) {
  CUNet<T> net(config.model, Rng::mix(config.seed, 1));
  Sgd<T> opt(config.lr, config.momentum);
  data::BatchIterator<T> batches(train, config.batch_size, Rng::mix(config.seed, 2), true);
  const std::string config_text = config.to_text();

  TrainResult result;
  double best = -1.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    batches.start_epoch(epoch - 1);
    data::Batch<T> batch;
    double loss_sum = 0;
    std::size_t seen = 0, index = 0;
    while (batches.next(batch)) {
      ++index;
      Tape<T> tape;
      const auto prob = net.forward(batch.images, ops::Mode::train, &tape);
      auto loss = ops::bce_loss(prob, batch.masks, &tape);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(index) + "; " + norm_report(net));
      }
      tape.backward(loss);
      opt.step(net.parameters());
      loss_sum += value * double(batch.indices.size());
      seen += batch.indices.size();
    }
    EpochStats st;
    st.epoch = epoch;
    st.mean_train_bce = loss_sum / double(seen);
    st.val_dice = score(net, val, config.threshold, config.batch_size).mean;
    if (st.val_dice > best) {
      best = st.val_dice;
      result.best = model::snapshot(net, {static_cast<std::int32_t>(epoch), st.val_dice,
                                          config.seed, config_text});
      if (hooks.on_improve) hooks.on_improve(result.best);
    }
    st.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(st);
    if (hooks.on_epoch) hooks.on_epoch(st);
  }
  return result;
}

bool is_double(const model::Checkpoint& ckpt) {
  return !ckpt.entries.empty() && ckpt.entries.front().bits == 64;
}

template <typename T>
std::vector<double> overfit_impl(const TrainConfig& config,
                                 std::span<const data::SliceSample> samples, std::size_t steps) {
  CUNet<T> net(config.model, Rng::mix(config.seed, 1));
  Sgd<T> opt(config.lr, config.momentum);
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto batch = data::make_batch<T>(samples, idx);
  std::vector<double> trace;
  trace.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    Tape<T> tape;
    auto loss = ops::bce_loss(net.forward(batch.images, ops::Mode::train, &tape), batch.masks, &tape);
    trace.push_back(loss.item());
    tape.backward(loss);
    opt.step(net.parameters());
  }
  return trace;
}

}  // namespace

TrainResult run_training(const TrainConfig& config, std::span<const data::SliceSample> train,
                         std::span<const EvalSubject> val, const TrainHooks& hooks) {
  config.validate();
  if (train.empty()) throw DataError("training fold has no slices");
  if (val.empty()) {
    throw DataError("validation fold is empty (a split needs at least 10 subjects to hold one out)");
  }
  if (config.precision == 64) return train_impl<double>(config, train, val, hooks);
  return train_impl<float>(config, train, val, hooks);
}

std::vector<Tensor<float>> predict_slices(const model::Checkpoint& ckpt,
                                          std::span<const data::SliceSample> slices,
                                          std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (is_double(ckpt)) {
    auto net = model::model_from_checkpoint<double>(ckpt);
    return infer(net, slices, batch_size);
  }
  auto net = model::model_from_checkpoint<float>(ckpt);
  return infer(net, slices, batch_size);
}

metrics::DiceReport evaluate_subjects(const model::Checkpoint& ckpt,
                                      std::span<const EvalSubject> subjects, double threshold,
                                      std::size_t batch_size) {
  if (subjects.empty()) throw DataError("no subjects to evaluate (empty fold)");
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must lie in (0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (is_double(ckpt)) {
    auto net = model::model_from_checkpoint<double>(ckpt);
    return score(net, subjects, threshold, batch_size);
  }
  auto net = model::model_from_checkpoint<float>(ckpt);
  return score(net, subjects, threshold, batch_size);
}

std::vector<double> overfit_single_batch(const TrainConfig& config,
                                         std::span<const data::SliceSample> batch,
                                         std::size_t steps) {
  if (batch.empty()) throw DataError("overfit needs at least one sample");
  if (config.precision == 64) return overfit_impl<double>(config, batch, steps);
  return overfit_impl<float>(config, batch, steps);
}

nifti::Volume predict_volume(const model::Checkpoint& ckpt, const data::SubjectVolumes& subject,
                             double threshold, std::size_t batch_size) {
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must lie in (0, 1)");
  if (ckpt.config.in_channels != data::kModalities.size() || ckpt.config.out_channels != 1) {
    throw DataError("checkpoint expects " + std::to_string(ckpt.config.in_channels) + " -> " +
                    std::to_string(ckpt.config.out_channels) +
                    " channels; prediction needs 4 modalities -> 1 mask");
  }
  const std::size_t multiple = slice_multiple(ckpt.config);
  data::SubjectVolumes images{subject.id, subject.modalities, std::nullopt};
  const auto slices = data::extract_slices(images, data::SlicePolicy::all, 0, multiple);
  const auto probs = predict_slices(ckpt, slices, batch_size);

  const auto ext = subject.modalities[0].extents();
  const auto px = data::padding_for(ext[0], multiple), py = data::padding_for(ext[1], multiple);
  nifti::Volume out(ext[0], ext[1], ext[2], 0.0);
  out.header = subject.modalities[0].header;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto m = crop_binarize(probs[i].data(), px, py, threshold);
    const std::size_t z = slices[i].z;
    for (std::size_t y = 0; y < ext[1]; ++y)
      for (std::size_t x = 0; x < ext[0]; ++x) out.at(x, y, z) = m[y * ext[0] + x];
  }
  return out;
}

}  // namespace cunet::train
