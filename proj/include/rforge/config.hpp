#pragma once

// Plain key=value run configuration. One pair per line, '#' starts a
// comment. Every key has a default; unknown keys are rejected. A resolved
// copy (all keys, defaults filled in) is written next to each run's outputs.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rforge/error.hpp"
#include "rforge/models.hpp"
#include "rforge/objective.hpp"
#include "rforge/phantom.hpp"
#include "rforge/relevance.hpp"
#include "rforge/rng.hpp"
#include "rforge/training.hpp"

namespace rforge {

inline constexpr const char* kSeedEnvVar = "RELEVANCE_FORGE_SEED";

struct ConfigKey {
  const char* key;
  const char* default_value;
  const char* help;
};

// Registry in output order. Prefixes group keys by the stage that reads them.
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "1", "base seed; every stage derives its own stream (env RELEVANCE_FORGE_SEED overrides)"},
      {"data.count", "200", "number of phantom cases"},
      {"data.dims", "32x32x32", "volume extents DxHxW"},
      {"data.channels", "2", "channels per volume"},
      {"data.class_ratio", "0.6", "fraction of class-1 cases"},
      {"data.radius_min", "5", "smallest blob semi-axis in voxels"},
      {"data.radius_max", "8", "largest blob semi-axis in voxels"},
      {"data.texture_contrast", "0.5", "peak blob modulation; 0 makes the classes indistinguishable"},
      {"data.split", "0.7,0.1,0.2", "train,val,test fractions (stratified)"},
      {"classifier.stem_width", "8", "channels of the stride-2 stem convolution"},
      {"classifier.block_widths", "8,16", "one stride-2 residual block per entry"},
      {"classifier.lr", "0.01", "Adam learning rate"},
      {"classifier.epochs", "100", "training epochs"},
      {"classifier.batch", "4", "minibatch size"},
      {"generator.encoder_widths", "4,8", "encoder stage widths, full resolution first"},
      {"generator.bottleneck_width", "2", "bottleneck channels (narrower than the widest encoder stage)"},
      {"generator.output_bias", "3", "initial mask logit bias; 3 starts masks near 0.95"},
      {"generator.lr", "0.1", "Adam learning rate (lower it if masks saturate)"},
      {"generator.epochs", "200", "training epochs"},
      {"generator.batch", "4", "minibatch size"},
      {"loss.alpha", "4", "indecisive penalty curvature"},
      {"loss.beta", "0.5", "indecisive penalty centre"},
      {"loss.delta", "1", "indecisive penalty offset"},
      {"loss.epsilon_gap", "1e-6", "floor on |y_p - y_np| inside the log"},
      {"loss.l1_mode", "voxel_mean", "voxel_mean or item_sum"},
      {"loss.weight_perturbation", "1", "perturbation term weight"},
      {"loss.weight_l1", "1", "L1 term weight"},
      {"loss.weight_indecisive", "1", "indecisive term weight"},
      {"slic.k", "64", "target superpixels per channel"},
      {"slic.m", "1", "compactness"},
      {"slic.max_iters", "10", "maximum k-means iterations"},
      {"slic.min_size_fraction", "0.25", "components below this fraction of N/k are merged"},
      {"relevance.bins", "10", "number of rank bins"},
      {"relevance.score_direction", "low-mask-is-relevant", "low-mask-is-relevant or high-score-is-relevant"},
      {"relevance.paint", "sum", "sum or mean of the mask over each superpixel"},
  };
  return keys;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.key] = k.default_value;
  }

  static bool known(const std::string& key) {
    const auto& ks = config_keys();
    return std::any_of(ks.begin(), ks.end(), [&](const ConfigKey& k) { return key == k.key; });
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  void parse(std::istream& is, const std::string& source) {
    std::string line;
    for (int n = 1; std::getline(is, line); ++n) {
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(source + ":" + std::to_string(n) + ": expected key=value");
      const std::string key = detail::trim(line.substr(0, eq));
      if (!known(key)) throw ConfigError(source + ":" + std::to_string(n) + ": unknown config key '" + key + "'");
      values_[key] = detail::trim(line.substr(eq + 1));
    }
  }

  static RunConfig load(const std::filesystem::path& path) {
    RunConfig cfg;
    std::ifstream is(path);
    if (!is) throw MissingInputError("cannot open config " + path.string());
    cfg.parse(is, path.string());
    return cfg;
  }

  // RELEVANCE_FORGE_SEED, when set, replaces `seed`.
  void apply_env() {
    if (const char* s = std::getenv(kSeedEnvVar); s && *s) {
      set("seed", s);
      (void)u64("seed");
    }
  }

  void write(std::ostream& os) const {
    for (const auto& k : config_keys()) os << k.key << " = " << values_.at(k.key) << "\n";
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream os(path);
    write(os);
    if (!os) throw FormatError("failed writing " + path.string());
  }

  // --- typed access ---------------------------------------------------------

  std::uint64_t u64(const std::string& key) const {
    const std::string& s = get(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
      throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
    return v;
  }

  std::uint32_t u32(const std::string& key) const {
    const auto v = u64(key);
    if (v > 0xFFFFFFFFull) throw ConfigError(key + ": value too large");
    return static_cast<std::uint32_t>(v);
  }

  double real(const std::string& key) const {
    const std::string& s = get(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
      throw ConfigError(key + ": expected a finite number, got '" + s + "'");
    return v;
  }

  std::vector<std::uint32_t> u32_list(const std::string& key) const {
    std::vector<std::uint32_t> out;
    for (const auto& part : detail::split_on(get(key), ',')) {
      std::uint32_t v = 0;
      const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
      if (part.empty() || ec != std::errc() || p != part.data() + part.size())
        throw ConfigError(key + ": expected comma-separated integers, got '" + get(key) + "'");
      out.push_back(v);
    }
    return out;
  }

  Dims dims(const std::string& key) const {
    const auto parts = detail::split_on(get(key), 'x');
    if (parts.size() != 3) throw ConfigError(key + ": expected DxHxW, got '" + get(key) + "'");
    std::array<std::uint32_t, 3> e{};
    for (int i = 0; i < 3; ++i) {
      const auto [p, ec] = std::from_chars(parts[i].data(), parts[i].data() + parts[i].size(), e[i]);
      if (parts[i].empty() || ec != std::errc() || p != parts[i].data() + parts[i].size() || e[i] == 0)
        throw ConfigError(key + ": expected positive DxHxW, got '" + get(key) + "'");
    }
    return Dims{e[0], e[1], e[2]};
  }

  // --- stage configs --------------------------------------------------------

  // Independent seed per stage, derived from `seed`.
  std::uint64_t stage_seed(std::uint64_t stage) const { return CounterRng(u64("seed"), stage).next_u64(); }

  PhantomSpec phantom() const {
    PhantomSpec s;
    s.seed = stage_seed(1);
    s.count = u32("data.count");
    s.dims = dims("data.dims");
    s.channels = u32("data.channels");
    s.class_ratio = real("data.class_ratio");
    s.blob_radius_min = real("data.radius_min");
    s.blob_radius_max = real("data.radius_max");
    s.texture_contrast = real("data.texture_contrast");
    s.validate();
    return s;
  }

  std::array<double, 3> split_fractions() const {
    const auto parts = detail::split_on(get("data.split"), ',');
    if (parts.size() != 3) throw ConfigError("data.split: expected three fractions");
    std::array<double, 3> f{};
    for (int i = 0; i < 3; ++i) {
      char* end = nullptr;
      f[i] = std::strtod(parts[i].c_str(), &end);
      if (parts[i].empty() || end != parts[i].c_str() + parts[i].size())
        throw ConfigError("data.split: bad fraction '" + parts[i] + "'");
    }
    return f;
  }

  std::uint64_t split_seed() const { return stage_seed(2); }

  ClassifierSpec classifier() const {
    ClassifierSpec s;
    s.in_channels = u32("data.channels");
    s.dims = dims("data.dims");
    s.stem_width = u32("classifier.stem_width");
    s.block_widths = u32_list("classifier.block_widths");
    return s;
  }

  GeneratorSpec generator() const {
    GeneratorSpec s;
    s.in_channels = u32("data.channels");
    s.dims = dims("data.dims");
    s.encoder_widths = u32_list("generator.encoder_widths");
    s.bottleneck_width = u32("generator.bottleneck_width");
    s.output_bias = real("generator.output_bias");
    return s;
  }

  TrainConfig classifier_training() const { return training("classifier", 3); }
  TrainConfig generator_training() const { return training("generator", 4); }

  LossConfig loss() const {
    LossConfig l;
    l.alpha = real("loss.alpha");
    l.beta = real("loss.beta");
    l.delta = real("loss.delta");
    l.epsilon_gap = real("loss.epsilon_gap");
    const std::string& mode = get("loss.l1_mode");
    if (mode == "voxel_mean") l.l1_mode = L1Mode::kVoxelMean;
    else if (mode == "item_sum") l.l1_mode = L1Mode::kItemSum;
    else throw ConfigError("loss.l1_mode: expected voxel_mean or item_sum, got '" + mode + "'");
    l.weight_perturbation = real("loss.weight_perturbation");
    l.weight_l1 = real("loss.weight_l1");
    l.weight_indecisive = real("loss.weight_indecisive");
    l.validate();
    return l;
  }

  SlicConfig slic() const {
    SlicConfig s;
    s.k = u32("slic.k");
    s.compactness = real("slic.m");
    s.max_iters = u32("slic.max_iters");
    s.min_size_fraction = real("slic.min_size_fraction");
    s.validate(dims("data.dims").count());
    return s;
  }

  RelevanceConfig relevance() const {
    RelevanceConfig r;
    r.bins = u32("relevance.bins");
    const std::string& dir = get("relevance.score_direction");
    if (dir == "low-mask-is-relevant") r.low_mask_is_relevant = true;
    else if (dir == "high-score-is-relevant") r.low_mask_is_relevant = false;
    else throw ConfigError("relevance.score_direction: unknown value '" + dir + "'");
    const std::string& paint = get("relevance.paint");
    if (paint == "sum") r.paint = PaintMode::kSum;
    else if (paint == "mean") r.paint = PaintMode::kMean;
    else throw ConfigError("relevance.paint: expected sum or mean, got '" + paint + "'");
    r.slic = slic();
    r.validate();
    return r;
  }

 private:
  TrainConfig training(const std::string& prefix, std::uint64_t stage) const {
    TrainConfig t;
    t.lr = real(prefix + ".lr");
    t.epochs = u32(prefix + ".epochs");
    t.batch = u32(prefix + ".batch");
    t.seed = stage_seed(stage);
    if (!(t.lr > 0.0)) throw ConfigError(prefix + ".lr must be > 0");
    if (t.batch == 0) throw ConfigError(prefix + ".batch must be positive");
    return t;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace rforge
