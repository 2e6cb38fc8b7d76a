#pragma once

// Desk-scale 3D residual classifier and encoder-decoder mask generator,
// both expressed as named parameter stores plus pure forward functions.
// The forward pass is fully determined by parameter names and shapes, so a
// loaded ".rnet" file needs no separate architecture description.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rforge/autodiff.hpp"
#include "rforge/error.hpp"
#include "rforge/rng.hpp"
#include "rforge/tensor.hpp"
#include "rforge/volume.hpp"

namespace rforge {

inline constexpr const char* kClassifierTag = "classifier";
inline constexpr const char* kGeneratorTag = "generator";

// Constant multiplier on the residual branch; stands in for normalization.
inline constexpr double kResidualBranchScale = 0.5;

template <class T>
struct NamedParam {
  std::string name;
  ad::Var<T> var;
};

template <class T>
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(std::string tag, std::uint64_t seed) : tag_(std::move(tag)), seed_(seed) {}

  const std::string& tag() const noexcept { return tag_; }
  std::uint32_t epoch() const noexcept { return epoch_; }
  void set_epoch(std::uint32_t e) noexcept { epoch_ = e; }
  std::uint64_t seed() const noexcept { return seed_; }

  void add(const std::string& name, Tensor<T> value) {
    if (index_.contains(name)) throw SpecError("duplicate parameter name " + name);
    index_[name] = params_.size();
    params_.push_back({name, ad::parameter(std::move(value))});
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  const ad::Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw FormatError("missing parameter " + name + " in " + tag_);
    return params_[it->second].var;
  }

  const std::vector<NamedParam<T>>& params() const noexcept { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var->grad = Tensor<T>();
  }

  // Frozen parameters receive no gradients; ops still differentiate
  // through them into their inputs.
  void set_trainable(bool trainable) {
    for (auto& p : params_) p.var->requires_grad = trainable;
  }

  // FNV-1a over names, shapes and value bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto mix = [&h](const void* data, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
    };
    for (const auto& p : params_) {
      mix(p.name.data(), p.name.size());
      for (auto e : p.var->value.shape) mix(&e, sizeof e);
      mix(p.var->value.data.data(), p.var->value.size() * sizeof(T));
    }
    return h;
  }

  // Deep copy of values; gradients are not copied.
  template <class U = T>
  ModelParams<U> clone() const {
    ModelParams<U> out(tag_, seed_);
    out.set_epoch(epoch_);
    for (const auto& p : params_) {
      out.add(p.name, p.var->value.template cast<U>());
      out.get(p.name)->requires_grad = p.var->requires_grad;
    }
    return out;
  }

 private:
  std::string tag_;
  std::uint32_t epoch_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<NamedParam<T>> params_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Specs

struct ClassifierSpec {
  std::uint32_t in_channels = 2;
  Dims dims{32, 32, 32};
  std::uint32_t stem_width = 8;
  // One stride-2 residual block per entry.
  std::vector<std::uint32_t> block_widths{8, 16};

  std::uint32_t downsampling() const noexcept {
    return 1u << (1 + block_widths.size());
  }
};

struct GeneratorSpec {
  std::uint32_t in_channels = 2;
  Dims dims{32, 32, 32};
  // Encoder stage widths, full resolution first; each later stage halves
  // the resolution.
  std::vector<std::uint32_t> encoder_widths{4, 8};
  std::uint32_t bottleneck_width = 2;
  // Initial bias of the mask logits; 0 starts every mask at 0.5.
  double output_bias = 0.0;

  std::uint32_t downsampling() const noexcept { return 1u << encoder_widths.size(); }
};

namespace detail {

inline void check_divisible(const Dims& d, std::uint32_t factor, const char* what) {
  if (d.d % factor || d.h % factor || d.w % factor)
    throw SpecError(std::string(what) + ": dims " + to_string(d) +
                    " not divisible by downsampling factor " + std::to_string(factor));
}

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, CounterRng rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
ad::Var<T> conv(const ModelParams<T>& m, const std::string& name, const ad::Var<T>& x, int stride) {
  const auto& w = m.get(name + ".w");
  const int pad = static_cast<int>(w->value.dim(2) / 2);
  return ad::conv3d(x, w, m.get(name + ".b"), stride, pad);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Classifier

// Fan-in scaled uniform init, zero biases. Hidden layers use gain sqrt(2),
// the projection and logit head gain 1. Each tensor draws from its own
// stream, indexed by creation order.
template <class T = float>
ModelParams<T> build_classifier(const ClassifierSpec& spec, std::uint64_t seed) {
  if (spec.in_channels == 0 || spec.stem_width == 0 || spec.block_widths.empty())
    throw SpecError("classifier spec needs channels, stem width and at least one block");
  detail::check_divisible(spec.dims, spec.downsampling(), "classifier");
  ModelParams<T> m(kClassifierTag, seed);
  CounterRng root(seed, 0xC1A5);
  std::uint64_t stream = 0;
  const double he = std::sqrt(2.0);
  const auto conv_param = [&](const std::string& name, std::uint32_t out, std::uint32_t in,
                              std::uint32_t k, double gain) {
    const double bound = gain * std::sqrt(3.0 / (static_cast<double>(in) * k * k * k));
    m.add(name + ".w", detail::uniform_tensor<T>({out, in, k, k, k}, bound, root.split(stream++)));
    m.add(name + ".b", Tensor<T>({out}));
  };
  conv_param("stem", spec.stem_width, spec.in_channels, 3, he);
  std::uint32_t in = spec.stem_width;
  for (std::size_t i = 0; i < spec.block_widths.size(); ++i) {
    const std::uint32_t out = spec.block_widths[i];
    const std::string p = "block" + std::to_string(i);
    conv_param(p + ".conv1", out, in, 3, he);
    conv_param(p + ".conv2", out, out, 3, he);
    conv_param(p + ".proj", out, in, 1, 1.0);
    in = out;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  m.add("head.w", detail::uniform_tensor<T>({1, in}, bound, root.split(stream++)));
  m.add("head.b", Tensor<T>({1}));
  return m;
}

inline std::size_t classifier_block_count(const auto& m) {
  std::size_t n = 0;
  while (m.contains("block" + std::to_string(n) + ".conv1.w")) ++n;
  return n;
}

// activation(scale * F(x) + shortcut(x)), stride 2; F = conv-relu-conv,
// shortcut = strided 1x1x1 projection.
template <class T>
ad::Var<T> residual_block(const ModelParams<T>& m, const std::string& prefix, const ad::Var<T>& x) {
  auto f = ad::relu(detail::conv(m, prefix + ".conv1", x, 2));
  f = ad::affine(detail::conv(m, prefix + ".conv2", f, 1), static_cast<T>(kResidualBranchScale));
  auto shortcut = detail::conv(m, prefix + ".proj", x, 2);
  return ad::relu(ad::add(f, shortcut));
}

// x: [N,C,D,H,W] -> logits [N,1].
template <class T>
ad::Var<T> classifier_logits(const ModelParams<T>& m, const ad::Var<T>& x) {
  if (m.tag() != kClassifierTag) throw FormatError("expected classifier parameters, got " + m.tag());
  auto h = ad::relu(detail::conv(m, "stem", x, 2));
  const std::size_t blocks = classifier_block_count(m);
  for (std::size_t i = 0; i < blocks; ++i) h = residual_block(m, "block" + std::to_string(i), h);
  return ad::dense(ad::global_avg_pool(h), m.get("head.w"), m.get("head.b"));
}

// x: [N,C,D,H,W] -> probabilities [N].
template <class T>
ad::Var<T> classifier_forward(const ModelParams<T>& m, const ad::Var<T>& x) {
  auto logits = classifier_logits(m, x);
  return ad::reshape(ad::sigmoid(logits), {logits->value.dim(0)});
}

// ---------------------------------------------------------------------------
// Generator

template <class T = float>
ModelParams<T> build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  const auto& enc = spec.encoder_widths;
  if (spec.in_channels == 0 || enc.empty() || spec.bottleneck_width == 0)
    throw SpecError("generator spec needs channels, encoder widths and a bottleneck");
  const std::uint32_t widest = *std::max_element(enc.begin(), enc.end());
  if (spec.bottleneck_width >= widest)
    throw SpecError("generator bottleneck width " + std::to_string(spec.bottleneck_width) +
                    " must be smaller than the widest encoder stage " + std::to_string(widest));
  detail::check_divisible(spec.dims, spec.downsampling(), "generator");
  ModelParams<T> m(kGeneratorTag, seed);
  CounterRng root(seed, 0x6E4);
  std::uint64_t stream = 0;
  const double he = std::sqrt(2.0);
  const auto conv_param = [&](const std::string& name, std::uint32_t out, std::uint32_t in,
                              double gain) {
    const double bound = gain * std::sqrt(3.0 / (static_cast<double>(in) * 27.0));
    m.add(name + ".w", detail::uniform_tensor<T>({out, in, 3, 3, 3}, bound, root.split(stream++)));
    m.add(name + ".b", Tensor<T>({out}));
  };
  std::uint32_t in = spec.in_channels;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    conv_param("enc" + std::to_string(i), enc[i], in, he);
    in = enc[i];
  }
  conv_param("bottleneck", spec.bottleneck_width, in, he);
  std::uint32_t below = spec.bottleneck_width;
  for (std::size_t i = enc.size() - 1; i >= 1; --i) {
    conv_param("dec" + std::to_string(i), enc[i], below + enc[i], he);
    below = enc[i];
  }
  conv_param("out", spec.in_channels, below + enc[0], 1.0);
  auto& bias = m.get("out.b")->value;
  for (auto& b : bias.data) b = static_cast<T>(spec.output_bias);
  return m;
}

inline std::size_t generator_depth(const auto& m) {
  std::size_t n = 0;
  while (m.contains("enc" + std::to_string(n) + ".w")) ++n;
  return n;
}

inline std::uint32_t generator_bottleneck_width(const auto& m) {
  return static_cast<std::uint32_t>(m.get("bottleneck.w")->value.dim(0));
}

inline std::uint32_t generator_max_encoder_width(const auto& m) {
  std::uint32_t widest = 0;
  for (std::size_t i = 0; i < generator_depth(m); ++i)
    widest = std::max(widest, static_cast<std::uint32_t>(m.get("enc" + std::to_string(i) + ".w")->value.dim(0)));
  return widest;
}

// Pre-sigmoid mask logits, same shape as x.
template <class T>
ad::Var<T> generator_logits(const ModelParams<T>& m, const ad::Var<T>& x) {
  if (m.tag() != kGeneratorTag) throw FormatError("expected generator parameters, got " + m.tag());
  const std::size_t depth = generator_depth(m);
  std::vector<ad::Var<T>> skips;
  auto h = x;
  for (std::size_t i = 0; i < depth; ++i) {
    h = ad::relu(detail::conv(m, "enc" + std::to_string(i), h, i == 0 ? 1 : 2));
    skips.push_back(h);
  }
  h = ad::relu(detail::conv(m, "bottleneck", h, 2));
  for (std::size_t i = depth - 1; i >= 1; --i)
    h = ad::relu(detail::conv(m, "dec" + std::to_string(i),
                              ad::concat_channels(ad::upsample2(h), skips[i]), 1));
  return detail::conv(m, "out", ad::concat_channels(ad::upsample2(h), skips[0]), 1);
}

// x: [N,C,D,H,W] -> mask in [0,1], same shape.
template <class T>
ad::Var<T> generator_forward(const ModelParams<T>& m, const ad::Var<T>& x) {
  return ad::sigmoid(generator_logits(m, x));
}

// ---------------------------------------------------------------------------
// Volume <-> tensor batches

template <class T = float>
Tensor<T> batch_tensor(std::span<const Volume* const> volumes) {
  if (volumes.empty()) throw DimensionError("empty batch");
  const Volume& first = *volumes.front();
  Tensor<T> t({volumes.size(), first.channels(), first.dims().d, first.dims().h, first.dims().w});
  std::size_t off = 0;
  for (const Volume* v : volumes) {
    if (!v->same_shape(first)) throw DimensionError("batch volumes differ in shape");
    std::copy(v->voxels().begin(), v->voxels().end(), t.data.begin() + off);
    off += v->size();
  }
  return t;
}

template <class T = float>
Tensor<T> batch_tensor(const Volume& v) {
  const Volume* p = &v;
  return batch_tensor<T>(std::span<const Volume* const>(&p, 1));
}

// Item `i` of a [N,C,D,H,W] tensor as a Volume.
template <class T>
Volume tensor_item(const Tensor<T>& t, std::size_t i) {
  const Dims d{static_cast<std::uint32_t>(t.dim(2)), static_cast<std::uint32_t>(t.dim(3)),
               static_cast<std::uint32_t>(t.dim(4))};
  const std::size_t per = t.size() / t.dim(0);
  std::vector<float> voxels(per);
  for (std::size_t j = 0; j < per; ++j) voxels[j] = static_cast<float>(t[i * per + j]);
  return Volume(static_cast<std::uint32_t>(t.dim(1)), d, std::move(voxels));
}

template <class T>
double predict(const ModelParams<T>& classifier, const Volume& v) {
  ad::NoGradGuard guard;
  return static_cast<double>(classifier_forward(classifier, ad::constant(batch_tensor<T>(v)))->value[0]);
}

template <class T>
std::vector<double> predict_batch(const ModelParams<T>& classifier, std::span<const Volume* const> vs) {
  ad::NoGradGuard guard;
  auto p = classifier_forward(classifier, ad::constant(batch_tensor<T>(vs)));
  return std::vector<double>(p->value.data.begin(), p->value.data.end());
}

template <class T>
PerturbationMask generate_mask(const ModelParams<T>& generator, const Volume& v) {
  ad::NoGradGuard guard;
  auto m = generator_forward(generator, ad::constant(batch_tensor<T>(v)));
  return PerturbationMask(tensor_item(m->value, 0));
}

// ---------------------------------------------------------------------------
// ".rnet": "RNP1", tag, u32 epoch, u32 count, then per parameter
// name, u32 rank, u32 extents, f32 values. Strings are u32-length-prefixed.

inline constexpr char kParamsMagic[4] = {'R', 'N', 'P', '1'};

template <class T>
void save_params(const ModelParams<T>& m, const std::filesystem::path& path) {
  auto os = io::open_out(path);
  os.write(kParamsMagic, 4);
  io::put_string(os, m.tag());
  io::put_u32(os, m.epoch());
  io::put_u32(os, static_cast<std::uint32_t>(m.params().size()));
  for (const auto& p : m.params()) {
    io::put_string(os, p.name);
    const auto& t = p.var->value;
    io::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape) io::put_u32(os, static_cast<std::uint32_t>(e));
    std::vector<float> values(t.data.begin(), t.data.end());
    io::put_f32s(os, values);
  }
  if (!os) throw FormatError("failed writing " + path.string());
}

// Loads into role `expected_tag` (empty accepts any tag).
inline ModelParams<float> load_params_bytes(std::vector<char> bytes, const std::string& source,
                                            const std::string& expected_tag = {}) {
  io::Reader r(std::move(bytes), source);
  if (r.bytes(4, "magic") != std::string(kParamsMagic, 4))
    throw FormatError(source + ": bad magic (expected RNP1)");
  const std::string tag = r.string("architecture tag");
  if (tag != kClassifierTag && tag != kGeneratorTag)
    throw FormatError(source + ": unknown architecture tag '" + tag + "'");
  if (!expected_tag.empty() && tag != expected_tag)
    throw FormatError(source + ": architecture tag '" + tag + "' where '" + expected_tag +
                      "' was expected");
  ModelParams<float> m(tag, 0);
  m.set_epoch(r.u32("epoch"));
  const std::uint32_t count = r.u32("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.string("parameter name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError(source + ": bad rank for " + name);
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& e : shape) {
      e = r.u32("extent");
      n *= e;
      if (n > (std::uint64_t{1} << 31)) throw FormatError(source + ": extents overflow for " + name);
    }
    Tensor<float> t(shape);
    r.f32s(t.data, "parameter values");
    m.add(name, std::move(t));
  }
  if (r.remaining() != 0) throw FormatError(source + ": trailing bytes after parameters");
  return m;
}

inline ModelParams<float> load_params(const std::filesystem::path& path,
                                      const std::string& expected_tag = {}) {
  return load_params_bytes(io::slurp(path), path.string(), expected_tag);
}

}  // namespace rforge
