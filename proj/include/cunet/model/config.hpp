#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace cunet::model {

/// Flat `key=value` text, one pair per line, keys sorted. Blank lines and
/// lines starting with '#' are ignored when parsing.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);

/// Round-trippable decimal form of a double.
std::string format_real(double value);

/// Typed lookups that throw ConfigError naming the key on bad values.
long long kv_int(const KeyValues& kv, const std::string& key);
double kv_real(const KeyValues& kv, const std::string& key);

struct CUNetConfig {
  std::size_t in_channels = 4;
  std::size_t out_channels = 1;
  std::size_t base_channels = 128;
  std::size_t depth = 3;
  std::size_t convs_per_block = 2;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  std::size_t bottleneck_channels() const { return base_channels << depth; }
  /// Spatial extents of the input must be multiples of this.
  std::size_t input_divisor() const { return std::size_t{1} << depth; }

  std::vector<std::size_t> encoder_channels() const;
  std::vector<std::size_t> decoder_channels() const;

  KeyValues to_key_values() const;
  /// Reads the keys it knows onto `base`; absent keys keep its values.
  static CUNetConfig from_key_values(const KeyValues& kv, const CUNetConfig& base);
  static CUNetConfig from_key_values(const KeyValues& kv) { return from_key_values(kv, CUNetConfig{}); }

  std::string to_text() const { return format_key_values(to_key_values()); }
  static CUNetConfig from_text(const std::string& text);

  /// base 8, depth 3: small enough for one CPU core.
  static CUNetConfig desk();
  /// base 128, depth 3: 128 -> 1024 channels.
  static CUNetConfig paper();

  friend bool operator==(const CUNetConfig&, const CUNetConfig&) = default;
};

}  // namespace cunet::model
