#pragma once

// Perturbation mask -> ranked relevance regions. Per channel: superpixels of
// the image channel, each painted with the sum of the mask channel over it;
// channels are summed voxelwise and the result binned into B ranks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "rforge/error.hpp"
#include "rforge/slic3d.hpp"
#include "rforge/volume.hpp"

namespace rforge {

enum class PaintMode { kSum, kMean };

struct RelevanceConfig {
  std::uint32_t bins = 10;
  // The generator suppresses what the classifier relies on, so by default a
  // low mask value marks high relevance and painted scores are inverted.
  bool low_mask_is_relevant = true;
  PaintMode paint = PaintMode::kSum;
  SlicConfig slic;

  void validate() const {
    if (bins < 2) throw SpecError("relevance.bins must be >= 2");
  }
};

struct RelevanceMap {
  Volume combined;                    // 1 channel, summed painted scores
  std::vector<std::uint32_t> ranks;   // 0 = most relevant
  std::uint32_t bins = 0;
  bool low_mask_is_relevant = true;
  std::vector<Volume> painted;        // per input channel
  std::vector<SuperpixelMap> superpixels;

  const Dims& dims() const noexcept { return combined.dims(); }

  Volume ranks_volume() const {
    return Volume(1, combined.dims(), std::vector<float>(ranks.begin(), ranks.end()));
  }

  // Score with "more relevant is larger" applied.
  std::vector<double> oriented_scores() const {
    const auto& v = combined.voxels();
    std::vector<double> out(v.begin(), v.end());
    if (low_mask_is_relevant) {
      const double hi = *std::max_element(out.begin(), out.end());
      for (auto& x : out) x = hi - x;
    }
    return out;
  }
};

// Every voxel of superpixel s takes the sum (or mean) of mask_channel over s.
inline Volume paint_superpixels(const Volume& mask_channel, const SuperpixelMap& sp,
                                PaintMode mode = PaintMode::kSum) {
  if (mask_channel.channels() != 1 || mask_channel.dims() != sp.dims)
    throw DimensionError("paint_superpixels: mask " + to_string(mask_channel.dims()) +
                         " does not match superpixel map " + to_string(sp.dims));
  std::vector<double> sums(sp.count, 0.0);
  std::vector<std::size_t> sizes(sp.count, 0);
  const auto& m = mask_channel.voxels();
  for (std::size_t i = 0; i < m.size(); ++i) {
    sums[sp.labels[i]] += m[i];
    ++sizes[sp.labels[i]];
  }
  if (mode == PaintMode::kMean)
    for (std::size_t s = 0; s < sums.size(); ++s)
      if (sizes[s]) sums[s] /= static_cast<double>(sizes[s]);
  Volume out(1, sp.dims);
  for (std::size_t i = 0; i < m.size(); ++i) out.voxels()[i] = static_cast<float>(sums[sp.labels[i]]);
  return out;
}

// Voxelwise sum of 1-channel volumes, accumulated in list order.
inline Volume combine_sequences(std::span<const Volume> painted) {
  if (painted.empty()) throw DimensionError("combine_sequences: empty list");
  const Volume& first = painted.front();
  if (first.channels() != 1) throw DimensionError("combine_sequences: inputs must be 1-channel");
  std::vector<double> acc(first.size(), 0.0);
  for (const Volume& v : painted) {
    if (!v.same_shape(first)) throw DimensionError("combine_sequences: shape mismatch");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v.voxels()[i];
  }
  return Volume(1, first.dims(), std::vector<float>(acc.begin(), acc.end()));
}

// Equal-width bins over the oriented score range; rank 0 is the top bin.
inline RelevanceMap bin_ranks(const Volume& combined, std::uint32_t bins, bool low_mask_is_relevant) {
  if (bins < 2) throw SpecError("bin_ranks needs at least 2 bins");
  if (combined.channels() != 1) throw DimensionError("bin_ranks expects a 1-channel volume");
  RelevanceMap rm;
  rm.combined = combined;
  rm.bins = bins;
  rm.low_mask_is_relevant = low_mask_is_relevant;
  const auto scores = rm.oriented_scores();
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw DegenerateMapError("relevance scores are constant; no ranking possible");
  rm.ranks.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double pos = (scores[i] - lo) * static_cast<double>(bins) / (hi - lo);
    const auto bin = std::min<std::uint32_t>(bins - 1, static_cast<std::uint32_t>(std::floor(pos)));
    rm.ranks[i] = bins - 1 - bin;
  }
  return rm;
}

inline RelevanceMap bin_ranks(const Volume& combined, const RelevanceConfig& cfg) {
  return bin_ranks(combined, cfg.bins, cfg.low_mask_is_relevant);
}

// Voxels whose rank is exactly `rank`.
inline BinaryMask top_regions(const RelevanceMap& rm, std::uint32_t rank) {
  if (rank >= rm.bins)
    throw RangeError("rank " + std::to_string(rank) + " out of range for " + std::to_string(rm.bins) + " bins");
  BinaryMask m(rm.dims());
  for (std::size_t i = 0; i < rm.ranks.size(); ++i) m.values[i] = rm.ranks[i] == rank ? 1 : 0;
  return m;
}

// Voxels with rank < depth.
inline BinaryMask union_of_ranks(const RelevanceMap& rm, std::uint32_t depth) {
  BinaryMask m(rm.dims());
  for (std::size_t i = 0; i < rm.ranks.size(); ++i) m.values[i] = rm.ranks[i] < depth ? 1 : 0;
  return m;
}

// Full pipeline for one case. `volume` is expected normalized; each channel
// is renormalized before segmentation (a no-op on normalized input).
inline RelevanceMap generate_relevance(const Volume& volume, const PerturbationMask& mask,
                                       const RelevanceConfig& cfg) {
  cfg.validate();
  if (!volume.same_shape(mask.values()))
    throw DimensionError("generate_relevance: mask shape does not match volume");
  std::vector<Volume> painted;
  std::vector<SuperpixelMap> maps;
  for (std::uint32_t c = 0; c < volume.channels(); ++c) {
    maps.push_back(slic_segment(minmax_normalize(volume.channel_volume(c)), cfg.slic));
    painted.push_back(paint_superpixels(mask.values().channel_volume(c), maps.back(), cfg.paint));
  }
  RelevanceMap rm = bin_ranks(combine_sequences(painted), cfg);
  rm.painted = std::move(painted);
  rm.superpixels = std::move(maps);
  return rm;
}

inline const char* score_direction_name(bool low_mask_is_relevant) {
  return low_mask_is_relevant ? "low-mask-is-relevant" : "high-score-is-relevant";
}

// combined.rvol, ranks.rvol, superpixels_c<i>.rvol and a key=value manifest.
inline void write_relevance(const RelevanceMap& rm, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_volume(rm.combined, dir / "combined.rvol");
  write_volume(rm.ranks_volume(), dir / "ranks.rvol");
  std::ofstream man(dir / "relevance_manifest.txt");
  man << "bins=" << rm.bins << "\n";
  man << "score_direction=" << score_direction_name(rm.low_mask_is_relevant) << "\n";
  for (std::size_t c = 0; c < rm.superpixels.size(); ++c) {
    const std::string name = "superpixels_c" + std::to_string(c) + ".rvol";
    write_volume(rm.superpixels[c].to_volume(), dir / name);
    man << "superpixels_c" << c << "=" << name << " count=" << rm.superpixels[c].count << "\n";
  }
  if (!man) throw FormatError("failed writing relevance manifest in " + dir.string());
}

}  // namespace rforge
