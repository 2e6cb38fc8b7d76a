#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rforge/volume.hpp"

namespace rforge::test {

// Exhaustive localized k-means written as plainly as possible: every voxel
// scans every center and keeps the nearest one whose per-axis offset is at
// most S (first index wins ties); voxels no center reaches scan all centers.
struct NaiveSlic {
  std::vector<std::uint32_t> labels;
  std::vector<std::array<double, 4>> centers;  // intensity, z, y, x
};

inline std::array<std::uint32_t, 3> naive_grid(const Dims& d, std::uint32_t k) {
  std::array<std::uint32_t, 3> best{1, 1, 1};
  double best_score = 1e300;
  for (std::uint32_t a = 1; a <= d.d; ++a)
    for (std::uint32_t b = 1; b <= d.h; ++b)
      for (std::uint32_t c = 1; c <= d.w; ++c) {
        const double p = double(a) * b * c;
        if (p > 2.0 * k + 2) continue;
        const double ez = double(d.d) / a, ey = double(d.h) / b, ex = double(d.w) / c;
        const double hi = std::max(ez, std::max(ey, ex)), lo = std::min(ez, std::min(ey, ex));
        const double score = 2.0 * std::fabs(std::log(p / k)) + std::log(hi / lo);
        if (score < best_score - 1e-12) {
          best_score = score;
          best = {a, b, c};
        }
      }
  return best;
}

inline NaiveSlic naive_slic(const Volume& v, std::uint32_t k, double m, std::uint32_t iters) {
  const Dims d = v.dims();
  const auto g = naive_grid(d, k);
  NaiveSlic out;
  for (std::uint32_t a = 0; a < g[0]; ++a)
    for (std::uint32_t b = 0; b < g[1]; ++b)
      for (std::uint32_t c = 0; c < g[2]; ++c) {
        const std::uint32_t z0 = a * d.d / g[0], z1 = (a + 1) * d.d / g[0];
        const std::uint32_t y0 = b * d.h / g[1], y1 = (b + 1) * d.h / g[1];
        const std::uint32_t x0 = c * d.w / g[2], x1 = (c + 1) * d.w / g[2];
        double sum = 0, n = 0;
        for (std::uint32_t z = z0; z < z1; ++z)
          for (std::uint32_t y = y0; y < y1; ++y)
            for (std::uint32_t x = x0; x < x1; ++x) sum += v.at(0, z, y, x), n += 1;
        out.centers.push_back({sum / n, (z0 + z1 - 1) / 2.0, (y0 + y1 - 1) / 2.0, (x0 + x1 - 1) / 2.0});
      }
  const double S = std::cbrt(double(d.count()) / k);
  const double w = (m / S) * (m / S);
  const auto dist = [&](double I, double z, double y, double x, const std::array<double, 4>& c) {
    const double di = I - c[0];
    return di * di + w * ((z - c[1]) * (z - c[1]) + (y - c[2]) * (y - c[2]) + (x - c[3]) * (x - c[3]));
  };
  for (std::uint32_t it = 0; it < iters; ++it) {
    out.labels.assign(d.count(), 0);
    for (std::uint32_t z = 0; z < d.d; ++z)
      for (std::uint32_t y = 0; y < d.h; ++y)
        for (std::uint32_t x = 0; x < d.w; ++x) {
          const double I = v.at(0, z, y, x);
          double best = 1e300;
          long arg = -1;
          for (std::size_t c = 0; c < out.centers.size(); ++c) {
            const auto& ct = out.centers[c];
            if (std::fabs(z - ct[1]) > S || std::fabs(y - ct[2]) > S || std::fabs(x - ct[3]) > S) continue;
            const double dd = dist(I, z, y, x, ct);
            if (dd < best) best = dd, arg = static_cast<long>(c);
          }
          if (arg < 0)
            for (std::size_t c = 0; c < out.centers.size(); ++c) {
              const double dd = dist(I, z, y, x, out.centers[c]);
              if (dd < best) best = dd, arg = static_cast<long>(c);
            }
          out.labels[(std::size_t(z) * d.h + y) * d.w + x] = static_cast<std::uint32_t>(arg);
        }
    double drift = 0;
    for (std::size_t c = 0; c < out.centers.size(); ++c) {
      double s[5] = {0, 0, 0, 0, 0};
      for (std::uint32_t z = 0; z < d.d; ++z)
        for (std::uint32_t y = 0; y < d.h; ++y)
          for (std::uint32_t x = 0; x < d.w; ++x)
            if (out.labels[(std::size_t(z) * d.h + y) * d.w + x] == c)
              s[0] += v.at(0, z, y, x), s[1] += z, s[2] += y, s[3] += x, s[4] += 1;
      if (s[4] == 0) continue;
      const std::array<double, 4> next{s[0] / s[4], s[1] / s[4], s[2] / s[4], s[3] / s[4]};
      double m2 = 0;
      for (int q = 0; q < 4; ++q) m2 += (next[q] - out.centers[c][q]) * (next[q] - out.centers[c][q]);
      drift = std::max(drift, std::sqrt(m2));
      out.centers[c] = next;
    }
    if (drift < 1e-4) break;
  }
  return out;
}

}  // namespace rforge::test
