#pragma once

// 3D SLIC: localized k-means over (intensity, z, y, x) on one channel,
// followed by 6-connected component cleanup.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <set>
#include <vector>

#include "rforge/error.hpp"
#include "rforge/volume.hpp"

namespace rforge {

struct SlicConfig {
  std::uint32_t k = 64;
  double compactness = 1.0;
  std::uint32_t max_iters = 10;
  double min_size_fraction = 0.25;
  double drift_tolerance = 1e-4;

  void validate(std::size_t voxels) const {
    if (k < 2) throw SpecError("slic.k must be >= 2");
    if (k > voxels)
      throw SpecError("slic.k = " + std::to_string(k) + " exceeds voxel count " + std::to_string(voxels));
    if (!(compactness > 0.0)) throw SpecError("slic.m must be > 0");
    if (!(min_size_fraction >= 0.0)) throw SpecError("slic.min_size_fraction must be >= 0");
  }
};

struct SuperpixelMap {
  Dims dims{};
  std::vector<std::uint32_t> labels;
  std::uint32_t count = 0;

  Volume to_volume() const {
    std::vector<float> v(labels.begin(), labels.end());
    return Volume(1, dims, std::move(v));
  }
  static SuperpixelMap from_volume(const Volume& v) {
    if (v.channels() != 1) throw FormatError("superpixel map must be a 1-channel volume");
    SuperpixelMap m{v.dims(), std::vector<std::uint32_t>(v.size()), 0};
    for (std::size_t i = 0; i < v.size(); ++i) {
      const float x = v.voxels()[i];
      if (!(x >= 0.0f) || x != std::floor(x)) throw FormatError("superpixel label is not a non-negative integer");
      m.labels[i] = static_cast<std::uint32_t>(x);
      m.count = std::max(m.count, m.labels[i] + 1);
    }
    return m;
  }
  friend bool operator==(const SuperpixelMap&, const SuperpixelMap&) = default;
};

struct SlicCenter {
  double intensity = 0, z = 0, y = 0, x = 0;
};

// Seed grid counts per axis. Prefers an exact factorization of k into
// near-cubic cells; the score is 2|ln(P/k)| + ln(max cell / min cell).
inline std::array<std::uint32_t, 3> slic_grid(const Dims& d, std::uint32_t k) {
  std::array<std::uint32_t, 3> best{1, 1, 1};
  double best_score = std::numeric_limits<double>::infinity();
  for (std::uint32_t nz = 1; nz <= std::min(d.d, k); ++nz)
    for (std::uint32_t ny = 1; ny <= std::min(d.h, k / nz + 1); ++ny)
      for (std::uint32_t nx = 1; nx <= std::min(d.w, k / (nz * ny) + 1); ++nx) {
        const double p = static_cast<double>(nz) * ny * nx;
        const double cz = static_cast<double>(d.d) / nz, cy = static_cast<double>(d.h) / ny,
                     cx = static_cast<double>(d.w) / nx;
        const double aspect = std::max({cz, cy, cx}) / std::min({cz, cy, cx});
        const double score = 2.0 * std::abs(std::log(p / k)) + std::log(aspect);
        if (score < best_score - 1e-12) best_score = score, best = {nz, ny, nx};
      }
  return best;
}

// Cell boundaries along one axis: [floor(i E / n), floor((i+1) E / n)).
inline std::uint32_t grid_edge(std::uint32_t i, std::uint32_t extent, std::uint32_t n) {
  return static_cast<std::uint32_t>(static_cast<std::uint64_t>(i) * extent / n);
}

// One center per grid cell at the cell's voxel centroid, intensity = cell mean.
inline std::vector<SlicCenter> slic_initial_centers(const Volume& channel, std::uint32_t k) {
  const Dims& d = channel.dims();
  const auto g = slic_grid(d, k);
  std::vector<SlicCenter> centers;
  for (std::uint32_t iz = 0; iz < g[0]; ++iz)
    for (std::uint32_t iy = 0; iy < g[1]; ++iy)
      for (std::uint32_t ix = 0; ix < g[2]; ++ix) {
        const std::uint32_t z0 = grid_edge(iz, d.d, g[0]), z1 = grid_edge(iz + 1, d.d, g[0]);
        const std::uint32_t y0 = grid_edge(iy, d.h, g[1]), y1 = grid_edge(iy + 1, d.h, g[1]);
        const std::uint32_t x0 = grid_edge(ix, d.w, g[2]), x1 = grid_edge(ix + 1, d.w, g[2]);
        double acc = 0;
        for (std::uint32_t z = z0; z < z1; ++z)
          for (std::uint32_t y = y0; y < y1; ++y)
            for (std::uint32_t x = x0; x < x1; ++x) acc += channel.at(0, z, y, x);
        const double n = static_cast<double>(z1 - z0) * (y1 - y0) * (x1 - x0);
        centers.push_back({acc / n, (z0 + z1 - 1) / 2.0, (y0 + y1 - 1) / 2.0, (x0 + x1 - 1) / 2.0});
      }
  return centers;
}

inline double slic_spacing(const Dims& d, std::uint32_t k) {
  return std::cbrt(static_cast<double>(d.count()) / static_cast<double>(k));
}

// d^2 = (I - Ic)^2 + (m / S)^2 * |p - pc|^2.
inline double slic_distance2(double intensity, double z, double y, double x, const SlicCenter& c,
                             double spatial_weight) {
  const double di = intensity - c.intensity;
  const double dz = z - c.z, dy = y - c.y, dx = x - c.x;
  return di * di + spatial_weight * (dz * dz + dy * dy + dx * dx);
}

struct SlicAssignment {
  std::vector<std::uint32_t> labels;  // center index per voxel
  std::vector<SlicCenter> centers;
  std::uint32_t iterations = 0;
};

// The k-means stage alone. Each center claims voxels within S of it on every
// axis; ties keep the lower center index. Voxels no center reaches take the
// globally nearest center. Empty clusters keep their previous center.
inline SlicAssignment slic_assign(const Volume& channel, const SlicConfig& cfg) {
  if (channel.channels() != 1) throw DimensionError("slic expects a 1-channel volume");
  cfg.validate(channel.size());
  const Dims& d = channel.dims();
  const std::size_t n = channel.size();
  const double s = slic_spacing(d, cfg.k);
  const double spatial_weight = (cfg.compactness / s) * (cfg.compactness / s);
  const auto& I = channel.voxels();

  SlicAssignment out;
  out.centers = slic_initial_centers(channel, cfg.k);
  auto& centers = out.centers;
  constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::vector<double> dist(n);
  std::vector<std::uint32_t>& labels = out.labels;

  const auto lo_bound = [](double c, double s) { return std::max(0.0, std::ceil(c - s)); };
  const auto hi_bound = [](double c, double s, std::uint32_t extent) {
    return std::min(static_cast<double>(extent) - 1.0, std::floor(c + s));
  };

  for (std::uint32_t iter = 0; iter < std::max<std::uint32_t>(cfg.max_iters, 1); ++iter) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    labels.assign(n, kNone);
    for (std::uint32_t c = 0; c < centers.size(); ++c) {
      const SlicCenter& ctr = centers[c];
      const auto z0 = static_cast<std::uint32_t>(lo_bound(ctr.z, s));
      const auto y0 = static_cast<std::uint32_t>(lo_bound(ctr.y, s));
      const auto x0 = static_cast<std::uint32_t>(lo_bound(ctr.x, s));
      const double z1 = hi_bound(ctr.z, s, d.d), y1 = hi_bound(ctr.y, s, d.h), x1 = hi_bound(ctr.x, s, d.w);
      for (std::uint32_t z = z0; z <= z1; ++z)
        for (std::uint32_t y = y0; y <= y1; ++y)
          for (std::uint32_t x = x0; x <= x1; ++x) {
            const std::size_t i = (static_cast<std::size_t>(z) * d.h + y) * d.w + x;
            const double d2 = slic_distance2(I[i], z, y, x, ctr, spatial_weight);
            if (d2 < dist[i]) dist[i] = d2, labels[i] = c;
          }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] != kNone) continue;
      const std::uint32_t z = static_cast<std::uint32_t>(i / (static_cast<std::size_t>(d.h) * d.w));
      const std::uint32_t y = static_cast<std::uint32_t>((i / d.w) % d.h);
      const std::uint32_t x = static_cast<std::uint32_t>(i % d.w);
      for (std::uint32_t c = 0; c < centers.size(); ++c) {
        const double d2 = slic_distance2(I[i], z, y, x, centers[c], spatial_weight);
        if (d2 < dist[i]) dist[i] = d2, labels[i] = c;
      }
    }
    out.iterations = iter + 1;

    // Centroid update, accumulated in raster order per label.
    std::vector<std::array<double, 5>> acc(centers.size(), {0, 0, 0, 0, 0});
    for (std::size_t i = 0; i < n; ++i) {
      auto& a = acc[labels[i]];
      a[0] += I[i];
      a[1] += static_cast<double>(i / (static_cast<std::size_t>(d.h) * d.w));
      a[2] += static_cast<double>((i / d.w) % d.h);
      a[3] += static_cast<double>(i % d.w);
      a[4] += 1.0;
    }
    double drift = 0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (acc[c][4] == 0) continue;
      const SlicCenter next{acc[c][0] / acc[c][4], acc[c][1] / acc[c][4], acc[c][2] / acc[c][4],
                            acc[c][3] / acc[c][4]};
      const double m = std::sqrt((next.intensity - centers[c].intensity) * (next.intensity - centers[c].intensity) +
                                 (next.z - centers[c].z) * (next.z - centers[c].z) +
                                 (next.y - centers[c].y) * (next.y - centers[c].y) +
                                 (next.x - centers[c].x) * (next.x - centers[c].x));
      drift = std::max(drift, m);
      centers[c] = next;
    }
    if (drift < cfg.drift_tolerance) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Connectivity

// 6-connected components of equal-label voxels, numbered in raster order of
// their first voxel.
inline std::vector<std::uint32_t> label_components(const Dims& d, const std::vector<std::uint32_t>& labels,
                                                   std::uint32_t* count = nullptr) {
  const std::size_t n = d.count();
  constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> comp(n, kNone);
  std::uint32_t next = 0;
  std::vector<std::size_t> stack;
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (comp[seed] != kNone) continue;
    comp[seed] = next;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const std::size_t z = i / plane, y = (i / d.w) % d.h, x = i % d.w;
      const auto visit = [&](std::size_t j) {
        if (comp[j] == kNone && labels[j] == labels[i]) comp[j] = next, stack.push_back(j);
      };
      if (z > 0) visit(i - plane);
      if (z + 1 < d.d) visit(i + plane);
      if (y > 0) visit(i - d.w);
      if (y + 1 < d.h) visit(i + d.w);
      if (x > 0) visit(i - 1);
      if (x + 1 < d.w) visit(i + 1);
    }
    ++next;
  }
  if (count) *count = next;
  return comp;
}

// Renumbers labels to 0..count-1 in raster order of first appearance.
inline SuperpixelMap relabel_contiguous(const Dims& d, const std::vector<std::uint32_t>& labels) {
  SuperpixelMap m{d, std::vector<std::uint32_t>(labels.size()), 0};
  std::vector<std::uint32_t> remap;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::uint32_t l = labels[i];
    if (l >= remap.size()) remap.resize(l + 1, std::numeric_limits<std::uint32_t>::max());
    if (remap[l] == std::numeric_limits<std::uint32_t>::max()) remap[l] = m.count++;
    m.labels[i] = remap[l];
  }
  return m;
}

// Splits every label into its 6-connected components, then merges each
// component smaller than min_size_fraction * N / k into its largest
// adjacent component (smallest first; ties by lower component id).
inline SuperpixelMap enforce_connectivity(const Dims& d, const std::vector<std::uint32_t>& labels,
                                          const SlicConfig& cfg) {
  if (labels.size() != d.count()) throw DimensionError("label map size does not match dims");
  std::uint32_t ncomp = 0;
  const auto comp = label_components(d, labels, &ncomp);
  const double min_size = cfg.min_size_fraction * static_cast<double>(d.count()) / static_cast<double>(cfg.k);

  std::vector<std::size_t> size(ncomp, 0);
  for (auto c : comp) ++size[c];
  std::vector<std::set<std::uint32_t>> adj(ncomp);
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  for (std::size_t i = 0; i < comp.size(); ++i) {
    const std::size_t z = i / plane, y = (i / d.w) % d.h, x = i % d.w;
    const auto link = [&](std::size_t j) {
      if (comp[i] != comp[j]) adj[comp[i]].insert(comp[j]), adj[comp[j]].insert(comp[i]);
    };
    if (z + 1 < d.d) link(i + plane);
    if (y + 1 < d.h) link(i + d.w);
    if (x + 1 < d.w) link(i + 1);
  }

  std::vector<std::uint32_t> parent(ncomp);
  for (std::uint32_t c = 0; c < ncomp; ++c) parent[c] = c;
  const auto find = [&](std::uint32_t c) {
    while (parent[c] != c) c = parent[c] = parent[parent[c]];
    return c;
  };
  std::vector<bool> alive(ncomp, true);
  while (true) {
    std::uint32_t victim = ncomp;
    for (std::uint32_t c = 0; c < ncomp; ++c) {
      if (!alive[c] || static_cast<double>(size[c]) >= min_size || adj[c].empty()) continue;
      if (victim == ncomp || size[c] < size[victim]) victim = c;
    }
    if (victim == ncomp) break;
    std::uint32_t target = ncomp;
    for (std::uint32_t nb : adj[victim]) {
      if (target == ncomp || size[nb] > size[target] || (size[nb] == size[target] && nb < target)) target = nb;
    }
    parent[victim] = target;
    alive[victim] = false;
    size[target] += size[victim];
    for (std::uint32_t nb : adj[victim]) {
      adj[nb].erase(victim);
      if (nb != target) adj[nb].insert(target), adj[target].insert(nb);
    }
    adj[target].erase(victim);
    adj[victim].clear();
  }
  std::vector<std::uint32_t> merged(comp.size());
  for (std::size_t i = 0; i < comp.size(); ++i) merged[i] = find(comp[i]);
  return relabel_contiguous(d, merged);
}

inline SuperpixelMap enforce_connectivity(const SuperpixelMap& m, const SlicConfig& cfg) {
  return enforce_connectivity(m.dims, m.labels, cfg);
}

// Full segmentation of one normalized channel.
inline SuperpixelMap slic_segment(const Volume& channel, const SlicConfig& cfg) {
  const SlicAssignment a = slic_assign(channel, cfg);
  return enforce_connectivity(channel.dims(), a.labels, cfg);
}

// ---------------------------------------------------------------------------
// Invariant helpers.

inline bool is_partition(const SuperpixelMap& m) {
  if (m.labels.size() != m.dims.count()) return false;
  std::vector<std::size_t> hist(m.count, 0);
  for (auto l : m.labels) {
    if (l >= m.count) return false;
    ++hist[l];
  }
  return std::all_of(hist.begin(), hist.end(), [](auto h) { return h > 0; });
}

// True when every label's voxels form exactly one 6-connected component.
inline bool is_connected(const SuperpixelMap& m) {
  std::uint32_t comps = 0;
  label_components(m.dims, m.labels, &comps);
  return comps == m.count;
}

// Mean over superpixels of (internal faces shared with another label) / size.
inline double mean_surface_to_volume(const SuperpixelMap& m) {
  std::vector<double> faces(m.count, 0), size(m.count, 0);
  const Dims& d = m.dims;
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    size[m.labels[i]] += 1;
    const std::size_t z = i / plane, y = (i / d.w) % d.h, x = i % d.w;
    const auto face = [&](std::size_t j) {
      if (m.labels[i] != m.labels[j]) faces[m.labels[i]] += 1, faces[m.labels[j]] += 1;
    };
    if (z + 1 < d.d) face(i + plane);
    if (y + 1 < d.h) face(i + d.w);
    if (x + 1 < d.w) face(i + 1);
  }
  double acc = 0;
  for (std::uint32_t l = 0; l < m.count; ++l) acc += faces[l] / size[l];
  return acc / m.count;
}

}  // namespace rforge
