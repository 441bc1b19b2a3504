#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kptrack/autodiff.hpp"
#include "kptrack/dataio.hpp"
#include "kptrack/error.hpp"
#include "kptrack/ops.hpp"
#include "kptrack/tensor.hpp"
#include "kptrack/tsr.hpp"

namespace kptrack {

/// One 3x3 convolution with bias.
struct ConvLayer {
  std::string name;
  Tensor weight;  // [Cout, Cin, 3, 3]
  Tensor bias;    // [Cout]
  int stride = 1;

  static ConvLayer he_init(std::string name, std::int64_t cin, std::int64_t cout, int stride, std::mt19937_64& rng,
                           double gain = 2.0) {
    ConvLayer l;
    l.name = std::move(name);
    l.stride = stride;
    l.weight = Tensor(Shape{cout, cin, 3, 3});
    l.bias = Tensor(Shape{cout});
    std::normal_distribution<double> nd(0.0, std::sqrt(gain / static_cast<double>(cin * 9)));
    for (auto& v : l.weight.data()) v = static_cast<float>(nd(rng));
    l.weight.set_requires_grad(true);
    l.bias.set_requires_grad(true);
    return l;
  }

  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, 1); }

  /// Deep copy with fresh storage and no gradient buffers.
  ConvLayer clone() const {
    ConvLayer l{name, weight.clone(), bias.clone(), stride};
    l.weight.zero_grad();
    l.bias.zero_grad();
    return l;
  }
};

// ---------------------------------------------------------------------------
// Single-frame segmentation network: 4-stage strided encoder, bilinear
// decoder with additive skips, C-channel logits.

class MiniSeg {
 public:
  MiniSeg() = default;

  static MiniSeg init(int num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw ShapeError("MiniSeg: need at least 2 classes");
    MiniSeg m;
    m.num_classes_ = num_classes;
    std::mt19937_64 rng(seed);
    m.layers_.push_back(ConvLayer::he_init("enc1", 3, 16, 1, rng));
    m.layers_.push_back(ConvLayer::he_init("enc2", 16, 32, 2, rng));
    m.layers_.push_back(ConvLayer::he_init("enc3", 32, 64, 2, rng));
    m.layers_.push_back(ConvLayer::he_init("enc4", 64, 64, 2, rng));
    m.layers_.push_back(ConvLayer::he_init("dec3", 64, 32, 1, rng));
    m.layers_.push_back(ConvLayer::he_init("dec2", 32, 16, 1, rng));
    m.layers_.push_back(ConvLayer::he_init("dec1", 16, num_classes, 1, rng, 1.0));
    return m;
  }

  int num_classes() const { return num_classes_; }

  Tensor logits(const Tensor& frame) const {
    require_rank(frame, 3, "sfc_forward");
    if (frame.dim(0) != 3) throw ShapeError("sfc_forward: expected an RGB frame, got " + shape_str(frame.shape()));
    if (frame.dim(1) % 8 != 0 || frame.dim(2) % 8 != 0) {
      throw ShapeError("sfc_forward: frame size " + std::to_string(frame.dim(1)) + "x" + std::to_string(frame.dim(2)) +
                       " must be divisible by 8 (pad first)");
    }
    const auto& L = layers_;
    const Tensor e1 = ops::relu(L[0](frame));
    const Tensor e2 = ops::relu(L[1](e1));
    const Tensor e3 = ops::relu(L[2](e2));
    const Tensor e4 = ops::relu(L[3](e3));
    const Tensor d3 = ops::relu(L[4](ops::add(ops::bilinear_upsample(e4, 2), e3)));
    const Tensor d2 = ops::relu(L[5](ops::add(ops::bilinear_upsample(d3, 2), e2)));
    return L[6](ops::add(ops::bilinear_upsample(d2, 2), e1));
  }

  Tensor forward(const Tensor& frame) const { return ops::softmax_channels(logits(frame)); }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  std::vector<ConvLayer>& layers() { return layers_; }
  const std::vector<ConvLayer>& layers() const { return layers_; }

  MiniSeg clone() const {
    MiniSeg m;
    m.num_classes_ = num_classes_;
    for (const auto& l : layers_) m.layers_.push_back(l.clone());
    return m;
  }

 private:
  int num_classes_ = 0;
  std::vector<ConvLayer> layers_;
};

inline Tensor sfc_forward(const MiniSeg& net, const Tensor& frame) { return net.forward(frame); }

// ---------------------------------------------------------------------------
// Multi-frame fusion.

enum class Variant { B, W };

inline std::string to_string(Variant v) { return v == Variant::B ? "B" : "W"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "B" || s == "b") return Variant::B;
  if (s == "W" || s == "w") return Variant::W;
  throw UsageError("unknown MFC variant \"" + s + "\" (expected B or W)");
}

struct MfcConfig {
  int k = 3;
  bool use_depth = true;
  Variant variant = Variant::W;
  int num_classes = 11;

  void validate() const {
    if (k < 2) throw UsageError("MFC window length K must be >= 2, got " + std::to_string(k));
    if (num_classes < 2) throw UsageError("MFC needs at least 2 classes");
  }

  std::int64_t input_channels() const {
    const std::int64_t depth = use_depth ? k : 0;
    const std::int64_t flow = variant == Variant::B ? 2 * (k - 1) : 0;
    return static_cast<std::int64_t>(k) * num_classes + depth + flow;
  }

  std::string label() const {
    return "MFCNet-" + to_string(variant) + " K=" + std::to_string(k) + (use_depth ? "" : " w/o depth");
  }

  bool operator==(const MfcConfig&) const = default;
};

inline json to_json(const MfcConfig& c) {
  return {{"k", c.k}, {"use_depth", c.use_depth}, {"variant", to_string(c.variant)}, {"num_classes", c.num_classes}};
}

inline MfcConfig mfc_config_from_json(const json& j) {
  MfcConfig c;
  c.k = j.at("k").get<int>();
  c.use_depth = j.at("use_depth").get<bool>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.num_classes = j.at("num_classes").get<int>();
  c.validate();
  return c;
}

/// Builds the fusion input. probmaps and depths are ordered past to current;
/// flows[j] maps the current frame onto frame j (j < K-1).
///   B: [probmaps | flows scaled by (1/W, 1/H) | depths]
///   W: [past probmaps warped to the current frame, current probmap |
///       warped past depths, current depth]
inline Tensor assemble_mfc_input(const std::vector<Tensor>& probmaps, const std::vector<Tensor>& flows,
                                 const std::vector<Tensor>& depths, const MfcConfig& cfg) {
  cfg.validate();
  const auto k = static_cast<std::size_t>(cfg.k);
  if (probmaps.size() != k) {
    throw ShapeError("assemble_mfc_input: expected " + std::to_string(k) + " probmaps, got " +
                     std::to_string(probmaps.size()));
  }
  if (flows.size() != k - 1) {
    throw ShapeError("assemble_mfc_input: expected " + std::to_string(k - 1) + " flows, got " +
                     std::to_string(flows.size()));
  }
  if (cfg.use_depth && depths.size() != k) {
    throw ShapeError("assemble_mfc_input: expected " + std::to_string(k) + " depth maps, got " +
                     std::to_string(depths.size()));
  }
  const std::int64_t h = probmaps[0].dim(1), w = probmaps[0].dim(2);
  for (const auto& p : probmaps) require_shape(p, Shape{cfg.num_classes, h, w}, "assemble_mfc_input probmap");
  for (const auto& f : flows) require_shape(f, Shape{2, h, w}, "assemble_mfc_input flow");
  if (cfg.use_depth)
    for (const auto& d : depths) require_shape(d, Shape{1, h, w}, "assemble_mfc_input depth");

  std::vector<Tensor> parts;
  if (cfg.variant == Variant::B) {
    parts = probmaps;
    for (const auto& f : flows) {
      Tensor n(f.shape());
      const std::int64_t hw = h * w;
      for (std::int64_t i = 0; i < hw; ++i) {
        n[i] = f[i] / static_cast<float>(w);
        n[hw + i] = f[hw + i] / static_cast<float>(h);
      }
      parts.push_back(n);
    }
    if (cfg.use_depth) parts.insert(parts.end(), depths.begin(), depths.end());
  } else {
    for (std::size_t j = 0; j + 1 < k; ++j) parts.push_back(ops::grid_sample_flow(probmaps[j], flows[j]));
    parts.push_back(probmaps.back());
    if (cfg.use_depth) {
      for (std::size_t j = 0; j + 1 < k; ++j) parts.push_back(ops::grid_sample_flow(depths[j], flows[j]));
      parts.push_back(depths.back());
    }
  }
  return ops::concat_channels(parts);
}

/// 4-layer fusion CNN: in -> 64 -> 64 -> 64 -> C, ReLU between layers,
/// softmax output.
class MfcNet {
 public:
  MfcNet() = default;

  static MfcNet init(const MfcConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    MfcNet n;
    n.cfg_ = cfg;
    std::mt19937_64 rng(seed);
    n.layers_.push_back(ConvLayer::he_init("mfc1", cfg.input_channels(), kWidth, 1, rng));
    n.layers_.push_back(ConvLayer::he_init("mfc2", kWidth, kWidth, 1, rng));
    n.layers_.push_back(ConvLayer::he_init("mfc3", kWidth, kWidth, 1, rng));
    n.layers_.push_back(ConvLayer::he_init("mfc4", kWidth, cfg.num_classes, 1, rng, 1.0));
    return n;
  }

  /// He init, then the first C hidden channels of every layer are rewired to
  /// carry the current-frame probmap through unchanged and the output layer
  /// reads them with gain `logit_scale`. The untrained network therefore
  /// reproduces the single-frame argmax; the remaining channels start small.
  static MfcNet init_passthrough(const MfcConfig& cfg, std::uint64_t seed, float logit_scale = 10.0f,
                                 float residual_scale = 0.1f) {
    MfcNet n = init(cfg, seed);
    const std::int64_t c = cfg.num_classes;
    const std::int64_t current = static_cast<std::int64_t>(cfg.k - 1) * c;  // same offset in B and W layouts
    auto centre = [](ConvLayer& l, std::int64_t o, std::int64_t i) -> float& {
      const std::int64_t cin = l.weight.dim(1);
      return l.weight[((o * cin + i) * 3 + 1) * 3 + 1];
    };
    for (std::size_t li = 0; li < n.layers_.size(); ++li) {
      ConvLayer& l = n.layers_[li];
      const std::int64_t cin = l.weight.dim(1), per_out = cin * 9;
      auto w = l.weight.data();
      const bool last = li + 1 == n.layers_.size();
      if (last) {
        for (auto& v : w) v *= residual_scale;
        for (std::int64_t o = 0; o < c; ++o) {
          for (std::int64_t i = 0; i < c; ++i)
            for (std::int64_t t = 0; t < 9; ++t) w[static_cast<std::size_t>(o * per_out + i * 9 + t)] = 0.0f;
          centre(l, o, o) = logit_scale;
        }
      } else {
        for (std::int64_t o = 0; o < c; ++o) {
          std::fill_n(w.begin() + o * per_out, per_out, 0.0f);
          centre(l, o, li == 0 ? current + o : o) = 1.0f;
        }
      }
    }
    return n;
  }

  static constexpr std::int64_t kWidth = 64;

  const MfcConfig& config() const { return cfg_; }

  Tensor forward(const Tensor& input) const {
    require_rank(input, 3, "MfcNet");
    if (input.dim(0) != cfg_.input_channels()) {
      throw ShapeError("MfcNet: expected " + std::to_string(cfg_.input_channels()) + " input channels, got " +
                       std::to_string(input.dim(0)));
    }
    Tensor x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](x);
      if (i + 1 < layers_.size()) x = ops::relu(x);
    }
    return ops::softmax_channels(x);
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  std::vector<ConvLayer>& layers() { return layers_; }
  const std::vector<ConvLayer>& layers() const { return layers_; }

  MfcNet clone() const {
    MfcNet n;
    n.cfg_ = cfg_;
    for (const auto& l : layers_) n.layers_.push_back(l.clone());
    return n;
  }

 private:
  MfcConfig cfg_;
  std::vector<ConvLayer> layers_;
};

/// Runs the SFC network on every window frame, assembles the fusion input and
/// applies MFCNet. Frames must already have sizes divisible by 8.
inline Tensor mfc_forward(const MiniSeg& sfc, const MfcNet& net, const ClipWindow& window) {
  const MfcConfig& cfg = net.config();
  if (window.k() != cfg.k) {
    throw ShapeError("mfc_forward: window has " + std::to_string(window.k()) + " frames but the model expects K=" +
                     std::to_string(cfg.k));
  }
  std::vector<Tensor> probs;
  for (const auto& f : window.frames) probs.push_back(sfc.forward(f));
  return net.forward(assemble_mfc_input(probs, window.flows, window.depths, cfg));
}

// ---------------------------------------------------------------------------
// Losses.

inline constexpr double kProbFloor = 1e-8;
inline constexpr double kJaccardEps = 1e-7;

namespace detail {

inline void check_target(const Tensor& p, const SegMap& target, const char* what) {
  require_rank(p, 3, what);
  if (target.h != p.dim(1) || target.w != p.dim(2)) {
    throw ShapeError(std::string(what) + ": target " + std::to_string(target.h) + "x" + std::to_string(target.w) +
                     " does not match " + shape_str(p.shape()));
  }
  for (auto l : target.labels)
    if (l >= p.dim(0)) {
      throw ValidationError(std::string(what) + ": target label " + std::to_string(l) + " >= class count " +
                            std::to_string(p.dim(0)));
    }
}

}  // namespace detail

/// Per-pixel NLL of the target class, weighted (background by
/// `background_weight`, keypoint classes by 1) and normalized by the weight sum.
inline Tensor weighted_nll(const Tensor& probs, const SegMap& target, double background_weight = 0.01) {
  detail::check_target(probs, target, "weighted_nll");
  const std::int64_t hw = target.h * target.w;
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < hw; ++i) {
    const int t = target.labels[static_cast<std::size_t>(i)];
    const double w = t == 0 ? background_weight : 1.0;
    num += w * -std::log(std::max(static_cast<double>(probs[t * hw + i]), kProbFloor));
    den += w;
  }
  if (!(den > 0.0)) throw ValidationError("weighted_nll: total weight is zero");
  Tensor out = Tensor::scalar(static_cast<float>(num / den));
  kptrack::detail::record_op(out, {&probs}, [probs = probs, target, background_weight, den, hw, out]() mutable {
    const double g = out.grad()[0];
    auto gp = probs.grad_buffer();
    for (std::int64_t i = 0; i < hw; ++i) {
      const int t = target.labels[static_cast<std::size_t>(i)];
      const double p = probs[t * hw + i];
      if (p <= kProbFloor) continue;
      const double w = t == 0 ? background_weight : 1.0;
      gp[static_cast<std::size_t>(t * hw + i)] += static_cast<float>(-g * w / (den * p));
    }
  });
  return out;
}

/// Mean over `classes` of (sum p*g + eps) / (sum p + sum g - sum p*g + eps).
inline Tensor soft_jaccard(const Tensor& probs, const SegMap& target, const std::vector<int>& classes,
                           double eps = kJaccardEps) {
  detail::check_target(probs, target, "soft_jaccard");
  if (classes.empty()) throw UsageError("soft_jaccard: no keypoint classes");
  const std::int64_t hw = target.h * target.w;
  struct Stats {
    double inter = 0.0, psum = 0.0, gsum = 0.0;
  };
  std::vector<Stats> stats;
  double total = 0.0;
  for (int c : classes) {
    if (c <= 0 || c >= probs.dim(0)) throw UsageError("soft_jaccard: class " + std::to_string(c) + " is not a keypoint class");
    Stats s;
    for (std::int64_t i = 0; i < hw; ++i) {
      const double p = probs[c * hw + i];
      const double g = target.labels[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0;
      s.inter += p * g;
      s.psum += p;
      s.gsum += g;
    }
    total += (s.inter + eps) / (s.psum + s.gsum - s.inter + eps);
    stats.push_back(s);
  }
  const double n = static_cast<double>(classes.size());
  Tensor out = Tensor::scalar(static_cast<float>(total / n));
  kptrack::detail::record_op(out, {&probs}, [probs = probs, target, classes, stats, eps, n, hw, out]() mutable {
    const double g = out.grad()[0] / n;
    auto gp = probs.grad_buffer();
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
      const int c = classes[ci];
      const Stats& s = stats[ci];
      const double num = s.inter + eps, den = s.psum + s.gsum - s.inter + eps;
      // d/dp of num/den: g_i on the numerator, (1 - g_i) on the denominator.
      const double d_fg = g * (1.0 / den);
      const double d_bg = g * (-num / (den * den));
      for (std::int64_t i = 0; i < hw; ++i) {
        const bool fg = target.labels[static_cast<std::size_t>(i)] == c;
        gp[static_cast<std::size_t>(c * hw + i)] += static_cast<float>(fg ? d_fg : d_bg);
      }
    }
  });
  return out;
}

struct LossTerms {
  Tensor nll;      // H
  Tensor jaccard;  // J
  Tensor total;    // 0.7 H - 0.3 ln J
};

inline constexpr double kNllWeight = 0.7;
inline constexpr double kJaccardWeight = 0.3;

inline LossTerms composite_loss(const Tensor& probs, const SegMap& target, const std::vector<int>& keypoint_classes,
                                double background_weight = 0.01) {
  LossTerms t;
  t.nll = weighted_nll(probs, target, background_weight);
  t.jaccard = soft_jaccard(probs, target, keypoint_classes);
  t.total = ops::add(ops::scale(t.nll, static_cast<float>(kNllWeight)),
                     ops::scale(ops::log(t.jaccard), static_cast<float>(-kJaccardWeight)));
  return t;
}

/// All keypoint classes 1..C-1.
inline LossTerms composite_loss(const Tensor& probs, const SegMap& target, double background_weight = 0.01) {
  std::vector<int> classes;
  for (int c = 1; c < probs.dim(0); ++c) classes.push_back(c);
  return composite_loss(probs, target, classes, background_weight);
}

/// Scalar form of the combination, for reporting.
inline double combine_loss(double h, double j) { return kNllWeight * h - kJaccardWeight * std::log(j); }

// ---------------------------------------------------------------------------
// Checkpoints: "MKPT", u32 version, u32 header length, JSON header, then for
// each tensor a u32 name length, the name, and a TSR block.

struct Checkpoint {
  ClassTaxonomy taxonomy;
  MiniSeg sfc;
  std::optional<MfcNet> mfc;
  json meta = json::object();

  std::string arch() const { return mfc ? "miniseg+mfcnet" : "miniseg"; }

  Checkpoint clone() const {
    Checkpoint c{taxonomy, sfc.clone(), std::nullopt, meta};
    if (mfc) c.mfc = mfc->clone();
    return c;
  }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header{{"arch", ckpt.arch()},
              {"taxonomy", to_json(ckpt.taxonomy)},
              {"num_classes", ckpt.sfc.num_classes()},
              {"meta", ckpt.meta}};
  if (ckpt.mfc) header["mfc"] = to_json(ckpt.mfc->config());
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const auto& l : ckpt.sfc.layers()) {
    tensors.emplace_back("sfc." + l.name + ".weight", l.weight);
    tensors.emplace_back("sfc." + l.name + ".bias", l.bias);
  }
  if (ckpt.mfc) {
    for (const auto& l : ckpt.mfc->layers()) {
      tensors.emplace_back("mfc." + l.name + ".weight", l.weight);
      tensors.emplace_back("mfc." + l.name + ".bias", l.bias);
    }
  }
  json names = json::array();
  for (const auto& [n, t] : tensors) names.push_back(n);
  header["tensors"] = names;
  const std::string text = header.dump();

  // Write to a sibling temp file and rename so readers never see a partial file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    auto os = io::detail::open_out(tmp);
    os.write("MKPT", 4);
    io::detail::write_u32(os, kCheckpointVersion);
    io::detail::write_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [n, t] : tensors) {
      io::detail::write_u32(os, static_cast<std::uint32_t>(n.size()));
      os.write(n.data(), static_cast<std::streamsize>(n.size()));
      io::write_tsr(os, t);
    }
    if (!os) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto is = io::detail::open_in(path);
  const std::string what = path.string();
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "MKPT") throw ParseError(what + ": bad magic, expected \"MKPT\"");
  const auto version = io::detail::read_pod<std::uint32_t>(is, what);
  if (version != kCheckpointVersion) throw ParseError(what + ": unsupported checkpoint version " + std::to_string(version));
  const auto len = io::detail::read_pod<std::uint32_t>(is, what);
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (!is) throw ParseError(what + ": truncated header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": bad header: " + e.what());
  }
  Checkpoint ckpt;
  ckpt.taxonomy = taxonomy_from_json(header.at("taxonomy"));
  ckpt.meta = header.value("meta", json::object());
  const int classes = header.at("num_classes").get<int>();
  if (classes != ckpt.taxonomy.num_classes()) throw ValidationError(what + ": class count disagrees with taxonomy");
  ckpt.sfc = MiniSeg::init(classes, 0);
  if (header.contains("mfc")) ckpt.mfc = MfcNet::init(mfc_config_from_json(header.at("mfc")), 0);

  std::map<std::string, Tensor> slots;
  for (auto& l : ckpt.sfc.layers()) {
    slots["sfc." + l.name + ".weight"] = l.weight;
    slots["sfc." + l.name + ".bias"] = l.bias;
  }
  if (ckpt.mfc) {
    for (auto& l : ckpt.mfc->layers()) {
      slots["mfc." + l.name + ".weight"] = l.weight;
      slots["mfc." + l.name + ".bias"] = l.bias;
    }
  }
  const auto names = header.at("tensors").get<std::vector<std::string>>();
  if (names.size() != slots.size()) throw ParseError(what + ": tensor count does not match the architecture");
  for (const auto& expected : names) {
    const auto n = io::detail::read_pod<std::uint32_t>(is, what);
    std::string name(n, '\0');
    is.read(name.data(), n);
    if (!is || name != expected) throw ParseError(what + ": expected tensor \"" + expected + "\"");
    auto it = slots.find(name);
    if (it == slots.end()) throw ParseError(what + ": unknown tensor " + name);
    const Tensor t = io::read_tsr(is, what);
    if (t.shape() != it->second.shape()) {
      throw ParseError(what + ": tensor " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(it->second.shape()));
    }
    std::copy(t.data().begin(), t.data().end(), it->second.data().begin());
  }
  return ckpt;
}

}  // namespace kptrack
