#pragma once

// Synthetic labelled volumes with ground-truth blob masks. Every case holds
// one ellipsoidal blob modulated with the same peak amplitude in both
// classes: voxelwise noise for class 1, a smooth field for class 0. Only the
// spatial frequency inside the blob separates the classes, so intensity
// ranges (and hence min-max normalization) carry no label information.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rforge/error.hpp"
#include "rforge/rng.hpp"
#include "rforge/volume.hpp"

namespace rforge {

struct PhantomSpec {
  std::uint64_t seed = 1;
  std::uint32_t count = 200;
  Dims dims{32, 32, 32};
  std::uint32_t channels = 2;
  double class_ratio = 0.6;
  double blob_radius_min = 5.0;
  double blob_radius_max = 8.0;
  double texture_contrast = 0.5;

  void validate() const {
    if (count < 2) throw SpecError("phantom count must be >= 2");
    if (channels == 0) throw SpecError("phantom channels must be positive");
    if (!(class_ratio > 0.0 && class_ratio < 1.0)) throw SpecError("class_ratio must lie in (0,1)");
    if (!(blob_radius_min >= 1.0 && blob_radius_max >= blob_radius_min))
      throw SpecError("blob radius range must satisfy 1 <= min <= max");
    if (!(texture_contrast >= 0.0)) throw SpecError("texture_contrast must be >= 0");
    const std::uint32_t smallest = std::min({dims.d, dims.h, dims.w});
    if (2.0 * blob_radius_max + 3.0 > smallest)
      throw SpecError("blob radius " + std::to_string(blob_radius_max) + " does not fit in dims " +
                      to_string(dims));
  }
};

struct PhantomCase {
  Volume volume;
  int label = 0;
  BinaryMask truth;
};

namespace detail {

// Trilinear interpolation of a coarse random lattice: low-frequency noise in [-1, 1].
inline std::vector<float> smooth_noise(const Dims& d, std::uint32_t cells, CounterRng rng) {
  const std::uint32_t n = cells + 1;
  std::vector<double> lattice(static_cast<std::size_t>(n) * n * n);
  for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
  const auto at = [&](std::uint32_t z, std::uint32_t y, std::uint32_t x) {
    return lattice[(static_cast<std::size_t>(z) * n + y) * n + x];
  };
  std::vector<float> out(d.count());
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.h; ++y)
      for (std::uint32_t x = 0; x < d.w; ++x) {
        const double fz = (z + 0.5) / d.d * cells, fy = (y + 0.5) / d.h * cells,
                     fx = (x + 0.5) / d.w * cells;
        const auto z0 = std::min<std::uint32_t>(static_cast<std::uint32_t>(fz), cells - 1);
        const auto y0 = std::min<std::uint32_t>(static_cast<std::uint32_t>(fy), cells - 1);
        const auto x0 = std::min<std::uint32_t>(static_cast<std::uint32_t>(fx), cells - 1);
        const double tz = fz - z0, ty = fy - y0, tx = fx - x0;
        double v = 0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c)
              v += (a ? tz : 1 - tz) * (b ? ty : 1 - ty) * (c ? tx : 1 - tx) * at(z0 + a, y0 + b, x0 + c);
        out[(static_cast<std::size_t>(z) * d.h + y) * d.w + x] = static_cast<float>(v);
      }
  return out;
}

// Largest-remainder apportionment of `total` by `weights` (ties to the lower index).
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double q = static_cast<double>(total) * weights[i];
    out[i] = static_cast<std::size_t>(std::floor(q + 1e-9));
    used += out[i];
    rema.emplace_back(q - static_cast<double>(out[i]), i);
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; used < total; ++k, ++used) ++out[rema[k % rema.size()].second];
  return out;
}

}  // namespace detail

// Background level and blob brightening per channel.
inline constexpr double kPhantomBackground = 0.25;
inline constexpr double kPhantomBackgroundSwing = 0.12;
inline constexpr double kPhantomGrain = 0.01;

inline std::vector<int> phantom_labels(const PhantomSpec& spec) {
  const auto positives = static_cast<std::size_t>(std::lround(spec.count * spec.class_ratio));
  std::vector<int> labels(spec.count, 0);
  std::fill_n(labels.begin(), positives, 1);
  CounterRng rng(spec.seed, 0x1AB);
  shuffle(labels, rng);
  return labels;
}

// Case `index` of the dataset; independent of every other case.
inline PhantomCase generate_case(const PhantomSpec& spec, std::uint32_t index, int label) {
  const Dims& d = spec.dims;
  CounterRng rng = CounterRng(spec.seed, 0xCA5E).split(index);
  PhantomCase pc;
  pc.label = label;
  pc.volume = Volume(spec.channels, d);
  pc.truth = BinaryMask(d);

  const double rmax = spec.blob_radius_max;
  std::array<double, 3> centre{}, radius{};
  for (int a = 0; a < 3; ++a) {
    const double lo = std::ceil(rmax) + 1.0;
    const double hi = static_cast<double>(d[a]) - std::ceil(rmax) - 2.0;
    centre[a] = std::floor(rng.uniform(lo, hi + 1.0));
    radius[a] = rng.uniform(spec.blob_radius_min, spec.blob_radius_max);
  }
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.h; ++y)
      for (std::uint32_t x = 0; x < d.w; ++x) {
        const double dz = (z - centre[0]) / radius[0], dy = (y - centre[1]) / radius[1],
                     dx = (x - centre[2]) / radius[2];
        if (dz * dz + dy * dy + dx * dx <= 1.0)
          pc.truth.values[(static_cast<std::size_t>(z) * d.h + y) * d.w + x] = 1;
      }

  for (std::uint32_t c = 0; c < spec.channels; ++c) {
    CounterRng crng = rng.split(100 + c);
    const auto smooth = detail::smooth_noise(d, 4, crng.split(1));
    CounterRng grain = crng.split(2);
    CounterRng texture = crng.split(3);
    std::vector<float> field = detail::smooth_noise(d, 8, crng.split(4));
    if (label == 1)
      for (auto& t : field) t = static_cast<float>(texture.uniform(-1.0, 1.0));
    double peak = 0;
    for (std::size_t i = 0; i < field.size(); ++i)
      if (pc.truth.values[i]) peak = std::max(peak, std::abs(static_cast<double>(field[i])));
    const double scale = peak > 0 ? spec.texture_contrast / peak : 0.0;
    const double brighten = 0.35 - 0.1 * static_cast<double>(c % 3);
    auto out = pc.volume.channel(c);
    for (std::size_t i = 0; i < out.size(); ++i) {
      double v = kPhantomBackground + kPhantomBackgroundSwing * smooth[i] +
                 kPhantomGrain * grain.uniform(-1.0, 1.0);
      if (pc.truth.values[i]) v += brighten + scale * field[i];
      out[i] = static_cast<float>(std::max(v, 0.0));
    }
  }
  return pc;
}

inline std::vector<PhantomCase> generate(const PhantomSpec& spec) {
  spec.validate();
  const auto labels = phantom_labels(spec);
  std::vector<PhantomCase> cases;
  cases.reserve(spec.count);
  for (std::uint32_t i = 0; i < spec.count; ++i) cases.push_back(generate_case(spec, i, labels[i]));
  return cases;
}

// Mean squared 6-neighbour Laplacian over interior truth voxels of one
// channel: the closed-form texture statistic that separates the classes.
inline double blob_highpass_energy(const Volume& v, const BinaryMask& truth, std::uint32_t channel = 0) {
  const Dims& d = v.dims();
  double acc = 0;
  std::size_t n = 0;
  for (std::uint32_t z = 1; z + 1 < d.d; ++z)
    for (std::uint32_t y = 1; y + 1 < d.h; ++y)
      for (std::uint32_t x = 1; x + 1 < d.w; ++x) {
        if (!truth.values[(static_cast<std::size_t>(z) * d.h + y) * d.w + x]) continue;
        const double c = v.at(channel, z, y, x);
        const double nb = v.at(channel, z - 1, y, x) + v.at(channel, z + 1, y, x) +
                          v.at(channel, z, y - 1, x) + v.at(channel, z, y + 1, x) +
                          v.at(channel, z, y, x - 1) + v.at(channel, z, y, x + 1);
        const double lap = c - nb / 6.0;
        acc += lap * lap;
        ++n;
      }
  return n ? acc / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------

enum class SplitPart { kTrain = 0, kVal = 1, kTest = 2 };

inline const char* to_string(SplitPart p) {
  switch (p) {
    case SplitPart::kTrain: return "train";
    case SplitPart::kVal: return "val";
    case SplitPart::kTest: return "test";
  }
  return "?";
}

struct DatasetSplit {
  std::vector<std::size_t> train, val, test;
  std::vector<SplitPart> part_of;  // per case index
};

// Stratified split: part sizes by largest remainder over all cases, class-1
// counts per part by largest remainder over the positives.
inline DatasetSplit split(std::span<const int> labels, std::array<double, 3> fractions,
                          std::uint64_t seed) {
  double total = 0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw SpecError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw SpecError("split fractions must sum to 1");
  const std::vector<double> w(fractions.begin(), fractions.end());
  const std::size_t n = labels.size();
  const auto sizes = detail::apportion(n, w);
  for (std::size_t k = 0; k < 3; ++k)
    if (sizes[k] == 0)
      throw SpecError(std::string("split part '") + to_string(static_cast<SplitPart>(k)) + "' would be empty");

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (labels[i] ? pos : neg).push_back(i);
  std::vector<double> wp;
  for (std::size_t k = 0; k < 3; ++k) wp.push_back(static_cast<double>(sizes[k]) / static_cast<double>(n));
  auto pos_counts = detail::apportion(pos.size(), wp);
  std::array<std::size_t, 3> neg_counts{};
  for (std::size_t k = 0; k < 3; ++k) {
    pos_counts[k] = std::min(pos_counts[k], sizes[k]);
    neg_counts[k] = sizes[k] - pos_counts[k];
  }
  CounterRng rng(seed, 0x5B17);
  CounterRng rp = rng.split(1), rn = rng.split(0);
  shuffle(pos, rp);
  shuffle(neg, rn);

  DatasetSplit s;
  s.part_of.assign(n, SplitPart::kTrain);
  std::size_t ip = 0, in = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    auto& dst = k == 0 ? s.train : k == 1 ? s.val : s.test;
    for (std::size_t j = 0; j < pos_counts[k] && ip < pos.size(); ++j) dst.push_back(pos[ip++]);
    for (std::size_t j = 0; j < neg_counts[k] && in < neg.size(); ++j) dst.push_back(neg[in++]);
    std::sort(dst.begin(), dst.end());
    for (auto i : dst) s.part_of[i] = static_cast<SplitPart>(k);
  }
  return s;
}

}  // namespace rforge
