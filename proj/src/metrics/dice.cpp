#include "cunet/metrics/dice.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "cunet/error.hpp"

namespace cunet::metrics {

BinaryMask::BinaryMask(Shape shape, std::vector<std::uint8_t> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_numel(shape_) != values_.size()) {
    throw ShapeError("mask shape " + shape_to_string(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i] > 1) {
      throw DataError("mask is not binary: value " + std::to_string(values_[i]) + " at index " +
                      std::to_string(i));
    }
  }
}

BinaryMask BinaryMask::from_values(Shape shape, std::span<const double> values) {
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != 0.0 && values[i] != 1.0) {
      throw DataError("mask is not binary: value " + std::to_string(values[i]) + " at index " +
                      std::to_string(i));
    }
    out[i] = values[i] == 1.0;
  }
  return BinaryMask(std::move(shape), std::move(out));
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), 1));
}

namespace {

struct OverlapCounts {
  std::size_t intersection = 0;
  std::size_t pred = 0;
  std::size_t truth = 0;

  double dice() const {
    if (pred + truth == 0) return 1.0;
    return 2.0 * static_cast<double>(intersection) / static_cast<double>(pred + truth);
  }
};

OverlapCounts overlap(const BinaryMask& pred, const BinaryMask& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("dice: prediction shape " + shape_to_string(pred.shape()) +
                     " differs from truth shape " + shape_to_string(truth.shape()));
  }
  OverlapCounts c;
  const auto p = pred.values();
  const auto t = truth.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    c.intersection += p[i] & t[i];
    c.pred += p[i];
    c.truth += t[i];
  }
  return c;
}

}  // namespace

double dice_score(const BinaryMask& pred, const BinaryMask& truth) {
  return overlap(pred, truth).dice();
}

template <typename T>
BinaryMask binarize_prediction(const Tensor<T>& prob, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
  std::vector<std::uint8_t> out(prob.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(prob[i]) > threshold;
  return BinaryMask(prob.shape(), std::move(out));
}

template BinaryMask binarize_prediction<float>(const Tensor<float>&, double);
template BinaryMask binarize_prediction<double>(const Tensor<double>&, double);

double volume_dice(std::span<const SliceMasks> slices, std::size_t depth) {
  std::vector<int> seen(depth, 0);
  OverlapCounts total;
  for (const auto& s : slices) {
    if (s.z >= depth) {
      throw DataError("slice index " + std::to_string(s.z) + " outside volume depth " +
                      std::to_string(depth));
    }
    if (seen[s.z]++) throw DataError("duplicate slice index " + std::to_string(s.z));
    const OverlapCounts c = overlap(s.pred, s.truth);
    total.intersection += c.intersection;
    total.pred += c.pred;
    total.truth += c.truth;
  }
  for (std::size_t z = 0; z < depth; ++z) {
    if (!seen[z]) throw DataError("missing slice index " + std::to_string(z));
  }
  return total.dice();
}

double mean_slice_dice(std::span<const SliceMasks> slices) {
  if (slices.empty()) return 1.0;
  double s = 0;
  for (const auto& sl : slices) s += dice_score(sl.pred, sl.truth);
  return s / static_cast<double>(slices.size());
}

DiceReport DiceReport::from(std::vector<SubjectDice> rows, std::optional<double> per_slice_mean) {
  DiceReport r;
  r.per_subject = std::move(rows);
  r.count = r.per_subject.size();
  double s = 0;
  for (const auto& row : r.per_subject) s += row.dice;
  r.mean = r.count ? s / static_cast<double>(r.count) : 0.0;
  r.per_slice_mean = per_slice_mean;
  return r;
}

std::string DiceReport::to_text(int decimals) const {
  std::ostringstream os;
  char buf[64];
  os << "subject\tdice\n";
  for (const auto& row : per_subject) {
    std::snprintf(buf, sizeof buf, "%.*f", decimals, row.dice);
    os << row.subject_id << '\t' << buf << '\n';
  }
  std::snprintf(buf, sizeof buf, "%.*f", decimals, mean);
  os << "mean\t" << buf << '\n';
  if (per_slice_mean) {
    std::snprintf(buf, sizeof buf, "%.*f", decimals, *per_slice_mean);
    os << "# per_slice_mean\t" << buf << '\n';
  }
  return os.str();
}

DiceReport DiceReport::parse(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<SubjectDice> rows;
  std::optional<double> slice_mean;
  bool have_mean = false;
  double mean = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line == "subject\tdice") continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("malformed report line: " + line);
    const std::string key = line.substr(0, tab);
    const double value = std::stod(line.substr(tab + 1));
    if (key == "mean") {
      mean = value;
      have_mean = true;
    } else if (key == "# per_slice_mean") {
      slice_mean = value;
    } else {
      rows.push_back({key, value});
    }
  }
  if (!have_mean) throw DataError("report has no mean row");
  DiceReport r = from(std::move(rows), slice_mean);
  r.mean = mean;
  return r;
}

}  // namespace cunet::metrics
