#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rforge/error.hpp"

namespace rforge {

struct Dims {
  std::uint32_t d = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(d) * h * w;
  }
  std::uint32_t operator[](int axis) const noexcept { return axis == 0 ? d : axis == 1 ? h : w; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(const Dims& d) {
  return std::to_string(d.d) + "x" + std::to_string(d.h) + "x" + std::to_string(d.w);
}

// Multi-channel 3D grid of 32-bit reals, channel-major (c, z, y, x fastest).
class Volume {
 public:
  Volume() = default;
  Volume(std::uint32_t channels, Dims dims, float fill = 0.0f)
      : channels_(channels), dims_(dims), voxels_(checked_size(channels, dims), fill) {}
  Volume(std::uint32_t channels, Dims dims, std::vector<float> voxels)
      : channels_(channels), dims_(dims), voxels_(std::move(voxels)) {
    if (voxels_.size() != checked_size(channels, dims))
      throw DimensionError("voxel count " + std::to_string(voxels_.size()) +
                           " does not match " + std::to_string(channels) + "x" +
                           to_string(dims));
  }

  std::uint32_t channels() const noexcept { return channels_; }
  const Dims& dims() const noexcept { return dims_; }
  std::size_t channel_size() const noexcept { return dims_.count(); }
  std::size_t size() const noexcept { return voxels_.size(); }

  std::size_t index(std::uint32_t c, std::uint32_t z, std::uint32_t y, std::uint32_t x) const noexcept {
    return ((static_cast<std::size_t>(c) * dims_.d + z) * dims_.h + y) * dims_.w + x;
  }
  float& at(std::uint32_t c, std::uint32_t z, std::uint32_t y, std::uint32_t x) noexcept {
    return voxels_[index(c, z, y, x)];
  }
  float at(std::uint32_t c, std::uint32_t z, std::uint32_t y, std::uint32_t x) const noexcept {
    return voxels_[index(c, z, y, x)];
  }

  std::span<float> channel(std::uint32_t c) noexcept {
    return {voxels_.data() + c * channel_size(), channel_size()};
  }
  std::span<const float> channel(std::uint32_t c) const noexcept {
    return {voxels_.data() + c * channel_size(), channel_size()};
  }
  const std::vector<float>& voxels() const noexcept { return voxels_; }
  std::vector<float>& voxels() noexcept { return voxels_; }

  bool same_shape(const Volume& o) const noexcept {
    return channels_ == o.channels_ && dims_ == o.dims_;
  }

  // One channel as a 1-channel volume.
  Volume channel_volume(std::uint32_t c) const {
    if (c >= channels_) throw DimensionError("channel " + std::to_string(c) + " out of range");
    auto ch = channel(c);
    return Volume(1, dims_, std::vector<float>(ch.begin(), ch.end()));
  }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  static std::size_t checked_size(std::uint32_t channels, Dims dims) {
    if (channels == 0 || dims.d == 0 || dims.h == 0 || dims.w == 0)
      throw DimensionError("volume extents must be positive");
    return static_cast<std::size_t>(channels) * dims.count();
  }

  std::uint32_t channels_ = 0;
  Dims dims_{};
  std::vector<float> voxels_;
};

// Multiplicative perturbation field; same shape as the volume it perturbs,
// every value in [0, 1].
class PerturbationMask {
 public:
  PerturbationMask() = default;
  explicit PerturbationMask(Volume values) : values_(std::move(values)) {
    for (float v : values_.voxels())
      if (!(v >= 0.0f && v <= 1.0f))
        throw RangeError("perturbation mask value outside [0,1]");
  }
  const Volume& values() const noexcept { return values_; }
  std::uint32_t channels() const noexcept { return values_.channels(); }
  const Dims& dims() const noexcept { return values_.dims(); }

 private:
  Volume values_;
};

// Voxelwise {0,1} mask over one 3D grid.
struct BinaryMask {
  Dims dims{};
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  explicit BinaryMask(Dims d) : dims(d), values(d.count(), 0) {}
  BinaryMask(Dims d, std::vector<std::uint8_t> v) : dims(d), values(std::move(v)) {
    if (values.size() != dims.count()) throw DimensionError("binary mask size mismatch");
    for (auto& x : values)
      if (x > 1) throw RangeError("binary mask value must be 0 or 1");
  }

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto v : values) n += v;
    return n;
  }

  Volume to_volume() const {
    std::vector<float> out(values.begin(), values.end());
    return Volume(1, dims, std::move(out));
  }

  static BinaryMask from_volume(const Volume& v) {
    if (v.channels() != 1) throw FormatError("binary mask must be a 1-channel volume");
    BinaryMask m(v.dims());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const float x = v.voxels()[i];
      if (x != 0.0f && x != 1.0f) throw FormatError("binary mask voxel is not exactly 0.0 or 1.0");
      m.values[i] = x == 1.0f ? 1 : 0;
    }
    return m;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// ---------------------------------------------------------------------------
// Operations

// Per channel: (v - min) / (max - min); a constant channel becomes zeros.
inline Volume minmax_normalize(const Volume& v) {
  Volume out = v;
  for (std::uint32_t c = 0; c < v.channels(); ++c) {
    auto src = v.channel(c);
    auto dst = out.channel(c);
    const auto [lo_it, hi_it] = std::minmax_element(src.begin(), src.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (hi == lo) {
      std::fill(dst.begin(), dst.end(), 0.0f);
      continue;
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < src.size(); ++i) {
      float x = static_cast<float>((static_cast<double>(src[i]) - lo) / range);
      dst[i] = std::clamp(x, 0.0f, 1.0f);
    }
  }
  return out;
}

// Centered sub-grid; on odd remainders the extra voxel is dropped from the
// high-index side (offset = floor((source - target) / 2)).
inline Volume center_crop(const Volume& v, Dims target) {
  const Dims& s = v.dims();
  if (target.d == 0 || target.h == 0 || target.w == 0 || target.d > s.d || target.h > s.h ||
      target.w > s.w)
    throw DimensionError("crop target " + to_string(target) + " exceeds source " + to_string(s));
  const std::uint32_t oz = (s.d - target.d) / 2;
  const std::uint32_t oy = (s.h - target.h) / 2;
  const std::uint32_t ox = (s.w - target.w) / 2;
  Volume out(v.channels(), target);
  for (std::uint32_t c = 0; c < v.channels(); ++c)
    for (std::uint32_t z = 0; z < target.d; ++z)
      for (std::uint32_t y = 0; y < target.h; ++y) {
        const float* src = &v.voxels()[v.index(c, z + oz, y + oy, ox)];
        std::copy(src, src + target.w, &out.at(c, z, y, 0));
      }
  return out;
}

// Elementwise product: the perturbed volume.
inline Volume apply_mask(const Volume& v, const PerturbationMask& m) {
  if (!v.same_shape(m.values()))
    throw DimensionError("mask shape does not match volume shape");
  Volume out = v;
  const auto& mv = m.values().voxels();
  for (std::size_t i = 0; i < out.size(); ++i) out.voxels()[i] *= mv[i];
  return out;
}

// Crop to the working extents then normalize each channel; every stage of
// the pipeline loads cases through this.
inline Volume preprocess(const Volume& raw, Dims target) {
  return minmax_normalize(center_crop(raw, target));
}

struct Slice2D {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;
  float at(std::uint32_t r, std::uint32_t c) const noexcept { return values[r * cols + c]; }
};

// Plane at `index` along `axis` (0 = z, 1 = y, 2 = x).
inline Slice2D extract_slice(const Volume& v, std::uint32_t channel, int axis, std::uint32_t index) {
  if (channel >= v.channels()) throw DimensionError("slice channel out of range");
  if (axis < 0 || axis > 2) throw DimensionError("slice axis must be 0, 1 or 2");
  const Dims& d = v.dims();
  if (index >= d[axis]) throw DimensionError("slice index out of range");
  Slice2D s;
  if (axis == 0) {
    s.rows = d.h, s.cols = d.w;
  } else if (axis == 1) {
    s.rows = d.d, s.cols = d.w;
  } else {
    s.rows = d.d, s.cols = d.h;
  }
  s.values.resize(static_cast<std::size_t>(s.rows) * s.cols);
  for (std::uint32_t r = 0; r < s.rows; ++r)
    for (std::uint32_t c = 0; c < s.cols; ++c) {
      float x = 0.0f;
      if (axis == 0) x = v.at(channel, index, r, c);
      else if (axis == 1) x = v.at(channel, r, index, c);
      else x = v.at(channel, r, c, index);
      s.values[r * s.cols + c] = x;
    }
  return s;
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers shared by every on-disk format.

namespace io {

inline void put_u32(std::ostream& os, std::uint32_t x) {
  std::array<unsigned char, 4> b{static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                                 static_cast<unsigned char>(x >> 16),
                                 static_cast<unsigned char>(x >> 24)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void put_f32s(std::ostream& os, std::span<const float> xs) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(xs.data()),
             static_cast<std::streamsize>(xs.size() * sizeof(float)));
  } else {
    for (float f : xs) put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// Bounds-checked reader over an in-memory file image.
class Reader {
 public:
  Reader(std::vector<char> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* field) const {
    if (remaining() < n)
      throw FormatError(source_ + ": truncated while reading " + field);
  }

  std::uint32_t u32(const char* field) {
    need(4, field);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::string string(const char* field) {
    const std::uint32_t n = u32(field);
    return bytes(n, field);
  }

  void f32s(std::span<float> out, const char* field) {
    need(out.size() * 4, field);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), bytes_.data() + pos_, out.size() * 4);
      pos_ += out.size() * 4;
    } else {
      for (auto& f : out) f = std::bit_cast<float>(u32(field));
    }
  }

  const std::string& source() const noexcept { return source_; }

 private:
  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingInputError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw MissingInputError("cannot write " + path.string());
  return os;
}

}  // namespace io

// ".rvol": "RVF1", u32 channels, u32 D, u32 H, u32 W, then the payload.
inline constexpr char kVolumeMagic[4] = {'R', 'V', 'F', '1'};
// Upper bound on a single volume's payload; rejects absurd headers early.
inline constexpr std::uint64_t kMaxVolumeVoxels = std::uint64_t{1} << 32;

inline void write_volume(const Volume& v, std::ostream& os) {
  os.write(kVolumeMagic, 4);
  io::put_u32(os, v.channels());
  io::put_u32(os, v.dims().d);
  io::put_u32(os, v.dims().h);
  io::put_u32(os, v.dims().w);
  io::put_f32s(os, v.voxels());
}

inline void write_volume(const Volume& v, const std::filesystem::path& path) {
  auto os = io::open_out(path);
  write_volume(v, os);
  if (!os) throw FormatError("failed writing " + path.string());
}

inline Volume read_volume_bytes(std::vector<char> bytes, const std::string& source) {
  io::Reader r(std::move(bytes), source);
  if (r.bytes(4, "magic") != std::string(kVolumeMagic, 4))
    throw FormatError(source + ": bad magic (expected RVF1)");
  const std::uint32_t channels = r.u32("channels");
  Dims d;
  d.d = r.u32("D");
  d.h = r.u32("H");
  d.w = r.u32("W");
  if (channels == 0) throw FormatError(source + ": channels must be positive");
  if (d.d == 0 || d.h == 0 || d.w == 0) throw FormatError(source + ": dims must be positive");
  const std::uint64_t n = std::uint64_t{channels} * d.d * d.h * d.w;
  if (n > kMaxVolumeVoxels) throw FormatError(source + ": dims overflow");
  if (r.remaining() < n * 4) throw FormatError(source + ": truncated payload");
  if (r.remaining() > n * 4) throw FormatError(source + ": trailing bytes after payload");
  std::vector<float> voxels(n);
  r.f32s(voxels, "payload");
  return Volume(channels, d, std::move(voxels));
}

inline Volume read_volume(const std::filesystem::path& path) {
  return read_volume_bytes(io::slurp(path), path.string());
}

// 8-bit binary PGM, linearly scaled from the slice's own [min, max].
inline void write_pgm(const Slice2D& s, const std::filesystem::path& path) {
  auto os = io::open_out(path);
  os << "P5\n" << s.cols << " " << s.rows << "\n255\n";
  float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
  for (float x : s.values) lo = std::min(lo, x), hi = std::max(hi, x);
  std::vector<unsigned char> px(s.values.size(), 0);
  if (hi > lo)
    for (std::size_t i = 0; i < px.size(); ++i)
      px[i] = static_cast<unsigned char>(
          std::lround(255.0 * (static_cast<double>(s.values[i]) - lo) / (static_cast<double>(hi) - lo)));
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

}  // namespace rforge
