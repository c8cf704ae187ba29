#include "cunet/model/config.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "cunet/error.hpp"

namespace cunet::model {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::string& lookup(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("missing config key \"" + key + "\"");
  return it->second;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got \"" + line +
                        "\"");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw ConfigError("duplicate config key \"" + key + "\"");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::string format_real(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

long long kv_int(const KeyValues& kv, const std::string& key) {
  const std::string& s = lookup(kv, key);
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("config key \"" + key + "\": \"" + s + "\" is not an integer");
  }
  return v;
}

double kv_real(const KeyValues& kv, const std::string& key) {
  const std::string& s = lookup(kv, key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key \"" + key + "\": \"" + s + "\" is not a number");
}

void CUNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (out_channels < 1) throw ConfigError("out_channels must be >= 1");
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (depth > 12) throw ConfigError("depth must be <= 12");
  if (convs_per_block < 1) throw ConfigError("convs_per_block must be >= 1");
  if (!(bn_epsilon > 0)) throw ConfigError("bn_epsilon must be > 0");
  if (!(bn_momentum > 0 && bn_momentum <= 1)) throw ConfigError("bn_momentum must lie in (0, 1]");
}

std::vector<std::size_t> CUNetConfig::encoder_channels() const {
  std::vector<std::size_t> c;
  for (std::size_t l = 0; l < depth; ++l) c.push_back(base_channels << l);
  return c;
}

std::vector<std::size_t> CUNetConfig::decoder_channels() const {
  auto c = encoder_channels();
  return {c.rbegin(), c.rend()};
}

KeyValues CUNetConfig::to_key_values() const {
  return {
      {"model.base_channels", std::to_string(base_channels)},
      {"model.bn_epsilon", format_real(bn_epsilon)},
      {"model.bn_momentum", format_real(bn_momentum)},
      {"model.convs_per_block", std::to_string(convs_per_block)},
      {"model.depth", std::to_string(depth)},
      {"model.in_channels", std::to_string(in_channels)},
      {"model.out_channels", std::to_string(out_channels)},
  };
}

CUNetConfig CUNetConfig::from_key_values(const KeyValues& kv, const CUNetConfig& base) {
  CUNetConfig c = base;
  auto count = [&](const char* key, std::size_t& field) {
    if (!kv.count(key)) return;
    const long long v = kv_int(kv, key);
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    field = static_cast<std::size_t>(v);
  };
  count("model.in_channels", c.in_channels);
  count("model.out_channels", c.out_channels);
  count("model.base_channels", c.base_channels);
  count("model.depth", c.depth);
  count("model.convs_per_block", c.convs_per_block);
  if (kv.count("model.bn_epsilon")) c.bn_epsilon = kv_real(kv, "model.bn_epsilon");
  if (kv.count("model.bn_momentum")) c.bn_momentum = kv_real(kv, "model.bn_momentum");
  return c;
}

CUNetConfig CUNetConfig::from_text(const std::string& text) {
  return from_key_values(parse_key_values(text));
}

CUNetConfig CUNetConfig::desk() {
  CUNetConfig c;
  c.base_channels = 8;
  c.depth = 3;
  return c;
}

CUNetConfig CUNetConfig::paper() {
  CUNetConfig c;
  c.base_channels = 128;
  c.depth = 3;
  return c;
}

}  // namespace cunet::model
