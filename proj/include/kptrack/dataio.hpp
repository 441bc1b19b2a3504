#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kptrack/error.hpp"
#include "kptrack/image_io.hpp"
#include "kptrack/tensor.hpp"

namespace kptrack {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Keypoint classes. Background is always class 0; keypoint class i (0-based
/// in `names`) has class id i + 1.
struct ClassTaxonomy {
  std::vector<std::string> names;
  std::vector<int> max_instances;               // per keypoint class
  std::vector<std::pair<int, int>> flip_pairs;  // class ids swapped by a horizontal flip

  int num_classes() const { return static_cast<int>(names.size()) + 1; }

  std::vector<int> keypoint_classes() const {
    std::vector<int> out;
    for (int c = 1; c < num_classes(); ++c) out.push_back(c);
    return out;
  }

  std::optional<int> find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i) + 1;
    return std::nullopt;
  }

  int class_id(const std::string& name) const {
    if (auto id = find(name)) return *id;
    throw ValidationError("unknown keypoint class \"" + name + "\"");
  }

  const std::string& name(int class_id) const {
    if (class_id < 1 || class_id >= num_classes()) throw ValidationError("class id out of range: " + std::to_string(class_id));
    return names[static_cast<std::size_t>(class_id - 1)];
  }

  int max_instances_of(int class_id) const { return max_instances.at(static_cast<std::size_t>(class_id - 1)); }

  /// Class id after a horizontal flip.
  int flipped(int class_id) const {
    for (const auto& [a, b] : flip_pairs) {
      if (class_id == a) return b;
      if (class_id == b) return a;
    }
    return class_id;
  }

  bool operator==(const ClassTaxonomy&) const = default;

  /// Two tools x {EndPoint, ShaftPoint, HeadPoint, RightClasperPoint,
  /// LeftClasperPoint}: 11 classes with background.
  static ClassTaxonomy endovis() {
    ClassTaxonomy t;
    const char* parts[] = {"EndPoint", "ShaftPoint", "HeadPoint", "RightClasperPoint", "LeftClasperPoint"};
    for (const char* side : {"L_", "R_"})
      for (const char* p : parts) t.names.push_back(std::string(side) + p);
    t.max_instances.assign(10, 1);
    for (int i = 1; i <= 5; ++i) t.flip_pairs.emplace_back(i, i + 5);
    return t;
  }

  /// Two tools x {ToolTip (two instances), JawBase}: 5 classes with background.
  static ClassTaxonomy jigsaws() {
    ClassTaxonomy t;
    t.names = {"L_ToolTip", "L_JawBase", "R_ToolTip", "R_JawBase"};
    t.max_instances = {2, 1, 2, 1};
    t.flip_pairs = {{1, 3}, {2, 4}};
    return t;
  }
};

inline json to_json(const ClassTaxonomy& t) {
  json j;
  j["classes"] = t.names;
  j["max_instances"] = t.max_instances;
  json pairs = json::array();
  for (const auto& [a, b] : t.flip_pairs) pairs.push_back({t.name(a), t.name(b)});
  j["flip_pairs"] = pairs;
  return j;
}

inline ClassTaxonomy taxonomy_from_json(const json& j) {
  ClassTaxonomy t;
  try {
    t.names = j.at("classes").get<std::vector<std::string>>();
    if (t.names.empty()) throw ValidationError("taxonomy: empty class list");
    if (j.contains("max_instances")) {
      t.max_instances = j.at("max_instances").get<std::vector<int>>();
    } else {
      t.max_instances.assign(t.names.size(), 1);
    }
    if (t.max_instances.size() != t.names.size()) {
      throw ValidationError("taxonomy: max_instances has " + std::to_string(t.max_instances.size()) +
                            " entries for " + std::to_string(t.names.size()) + " classes");
    }
    for (int m : t.max_instances)
      if (m < 1) throw ValidationError("taxonomy: max_instances must be >= 1");
    if (j.contains("flip_pairs")) {
      for (const auto& p : j.at("flip_pairs")) {
        t.flip_pairs.emplace_back(t.class_id(p.at(0).get<std::string>()), t.class_id(p.at(1).get<std::string>()));
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("taxonomy: ") + e.what());
  }
  if (t.num_classes() > 255) throw ValidationError("taxonomy: at most 254 keypoint classes are supported");
  return t;
}

inline ClassTaxonomy load_taxonomy(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return taxonomy_from_json(j);
}

struct Keypoint {
  int class_id = 0;
  double x = 0.0;
  double y = 0.0;
  bool visible = true;
  bool operator==(const Keypoint&) const = default;
};

struct KeypointAnnotation {
  std::string video_id;
  int frame_index = 0;
  std::vector<Keypoint> keypoints;
  bool operator==(const KeypointAnnotation&) const = default;
};

/// Per-pixel hard labels in [0, C).
struct SegMap {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> labels;

  SegMap() = default;
  SegMap(std::int64_t height, std::int64_t width) : h(height), w(width), labels(static_cast<std::size_t>(height * width), 0) {}

  std::uint8_t& at(std::int64_t y, std::int64_t x) { return labels[static_cast<std::size_t>(y * w + x)]; }
  std::uint8_t at(std::int64_t y, std::int64_t x) const { return labels[static_cast<std::size_t>(y * w + x)]; }
  bool operator==(const SegMap&) const = default;
};

struct MaskSpec {
  double radius = 5.0;
  ClassTaxonomy taxonomy = ClassTaxonomy::endovis();
};

// ---------------------------------------------------------------------------
// Annotation JSON:
//   {"video": str, "frames": [{"index": int, "keypoints":
//       [{"class": str, "x": float, "y": float, "visible": bool}]}]}

namespace detail {

inline int line_of_byte(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace detail

struct FrameSize {
  std::int64_t h = 0;
  std::int64_t w = 0;
};

/// Parses annotation JSON text. Coordinates are range-checked against
/// `frame_size` when given (non-negativity is always enforced).
inline std::vector<KeypointAnnotation> parse_annotations(const std::string& text, const ClassTaxonomy& taxonomy,
                                                         std::optional<FrameSize> frame_size = std::nullopt,
                                                         const std::string& source = "annotations") {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": malformed JSON at line " + std::to_string(detail::line_of_byte(text, e.byte)) +
                     ": " + e.what());
  }
  std::vector<KeypointAnnotation> out;
  std::string field = "video";
  try {
    if (!j.is_object()) throw ParseError(source + ": top level must be an object");
    const std::string video = j.at("video").get<std::string>();
    field = "frames";
    const auto& frames = j.at("frames");
    if (!frames.is_array()) throw ParseError(source + ": \"frames\" must be an array");
    for (std::size_t fi = 0; fi < frames.size(); ++fi) {
      const auto& fr = frames[fi];
      field = "frames[" + std::to_string(fi) + "].index";
      KeypointAnnotation ann;
      ann.video_id = video;
      ann.frame_index = fr.at("index").get<int>();
      if (ann.frame_index < 0) throw ValidationError(source + ": " + field + " must be >= 0");
      field = "frames[" + std::to_string(fi) + "].keypoints";
      const auto& kps = fr.at("keypoints");
      std::map<int, int> per_class;
      for (std::size_t ki = 0; ki < kps.size(); ++ki) {
        const auto& k = kps[ki];
        const std::string base = "frames[" + std::to_string(fi) + "].keypoints[" + std::to_string(ki) + "]";
        field = base + ".class";
        const std::string cls = k.at("class").get<std::string>();
        auto id = taxonomy.find(cls);
        if (!id) {
          throw ValidationError(source + ": unknown class \"" + cls + "\" at " + field + " (frame " +
                                std::to_string(ann.frame_index) + ")");
        }
        Keypoint kp;
        kp.class_id = *id;
        field = base + ".x";
        kp.x = k.at("x").get<double>();
        field = base + ".y";
        kp.y = k.at("y").get<double>();
        field = base + ".visible";
        kp.visible = k.contains("visible") ? k.at("visible").get<bool>() : true;
        if (!std::isfinite(kp.x) || !std::isfinite(kp.y)) {
          throw ValidationError(source + ": non-finite coordinate for class " + cls + " in frame " +
                                std::to_string(ann.frame_index));
        }
        if (kp.visible) {
          const bool below = kp.x < 0.0 || kp.y < 0.0;
          const bool above = frame_size && (kp.x >= static_cast<double>(frame_size->w) ||
                                            kp.y >= static_cast<double>(frame_size->h));
          if (below || above) {
            std::ostringstream os;
            os << source << ": keypoint " << cls << " in frame " << ann.frame_index << " at (" << kp.x << ", " << kp.y
               << ") is outside the frame";
            if (frame_size) os << " " << frame_size->w << "x" << frame_size->h;
            os << " (" << base << ")";
            throw ValidationError(os.str());
          }
        }
        if (++per_class[kp.class_id] > taxonomy.max_instances_of(kp.class_id)) {
          throw ValidationError(source + ": frame " + std::to_string(ann.frame_index) + " has more than " +
                                std::to_string(taxonomy.max_instances_of(kp.class_id)) + " instance(s) of class " + cls);
        }
        ann.keypoints.push_back(kp);
      }
      out.push_back(std::move(ann));
    }
  } catch (const json::exception& e) {
    throw ParseError(source + ": bad or missing field " + field + ": " + e.what());
  }
  return out;
}

inline std::vector<KeypointAnnotation> load_annotations(const fs::path& path, const ClassTaxonomy& taxonomy,
                                                        std::optional<FrameSize> frame_size = std::nullopt) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_annotations(ss.str(), taxonomy, frame_size, path.string());
}

inline std::string annotations_to_string(const std::vector<KeypointAnnotation>& anns, const ClassTaxonomy& taxonomy,
                                         const std::string& video_id = {}) {
  json j;
  j["video"] = anns.empty() ? video_id : anns.front().video_id;
  json frames = json::array();
  for (const auto& a : anns) {
    json kps = json::array();
    for (const auto& k : a.keypoints) {
      kps.push_back({{"class", taxonomy.name(k.class_id)}, {"x", k.x}, {"y", k.y}, {"visible", k.visible}});
    }
    frames.push_back({{"index", a.frame_index}, {"keypoints", kps}});
  }
  j["frames"] = frames;
  return j.dump(2) + "\n";
}

inline void write_annotations(const fs::path& path, const std::vector<KeypointAnnotation>& anns,
                              const ClassTaxonomy& taxonomy, const std::string& video_id = {}) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << annotations_to_string(anns, taxonomy, video_id);
}

// ---------------------------------------------------------------------------
// Mask rasterization.

/// Paints a disk of radius r_d around every visible keypoint. Pixel centres
/// sit at integer coordinates; a pixel belongs to the disk iff its centre is
/// within r_d of the (sub-pixel) keypoint. Overlaps go to the higher class id.
inline SegMap rasterize_masks(const KeypointAnnotation& ann, const MaskSpec& spec, std::int64_t h, std::int64_t w) {
  if (!(spec.radius > 0.0)) throw ValidationError("mask radius must be positive");
  SegMap map(h, w);
  std::vector<Keypoint> kps;
  for (const auto& k : ann.keypoints)
    if (k.visible) kps.push_back(k);
  std::stable_sort(kps.begin(), kps.end(), [](const Keypoint& a, const Keypoint& b) { return a.class_id < b.class_id; });
  const double r2 = spec.radius * spec.radius;
  for (const auto& k : kps) {
    const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(k.y - spec.radius)));
    const auto y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(k.y + spec.radius)));
    const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(k.x - spec.radius)));
    const auto x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(k.x + spec.radius)));
    for (std::int64_t y = y0; y <= y1; ++y)
      for (std::int64_t x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) - k.x, dy = static_cast<double>(y) - k.y;
        if (dx * dx + dy * dy <= r2) map.at(y, x) = static_cast<std::uint8_t>(k.class_id);
      }
  }
  return map;
}

// ---------------------------------------------------------------------------
// Augmentation: seeded joint geometry (flip, crop-and-resize) plus frame-only
// brightness/contrast jitter.

struct AugmentConfig {
  double flip_prob = 0.5;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double photometric = 0.1;  // brightness and contrast factors drawn in [1-p, 1+p]
};

/// One concrete draw. Output pixel p maps to input position
/// origin + p / scale, then x is mirrored when `flip` is set.
struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;

  bool is_identity() const {
    return !flip && scale == 1.0 && origin_x == 0.0 && origin_y == 0.0 && brightness == 1.0 && contrast == 1.0;
  }
};

inline AugmentParams draw_augment(std::uint64_t seed, std::int64_t h, std::int64_t w, const AugmentConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  AugmentParams p;
  p.flip = u01(rng) < cfg.flip_prob;
  p.scale = cfg.min_scale + (cfg.max_scale - cfg.min_scale) * u01(rng);
  // Crop window of size (w/scale, h/scale); for zoom-out it extends past the
  // frame and the border is replicated.
  const double span_x = static_cast<double>(w) - static_cast<double>(w) / p.scale;
  const double span_y = static_cast<double>(h) - static_cast<double>(h) / p.scale;
  p.origin_x = std::min(0.0, span_x) + std::abs(span_x) * u01(rng);
  p.origin_y = std::min(0.0, span_y) + std::abs(span_y) * u01(rng);
  p.brightness = 1.0 + cfg.photometric * (2.0 * u01(rng) - 1.0);
  p.contrast = 1.0 + cfg.photometric * (2.0 * u01(rng) - 1.0);
  return p;
}

/// Maps an input-image point to its augmented position.
inline std::pair<double, double> augment_point(const AugmentParams& p, double x, double y, std::int64_t w) {
  double ox = (x - p.origin_x) * p.scale;
  const double oy = (y - p.origin_y) * p.scale;
  if (p.flip) ox = static_cast<double>(w - 1) - ox;
  return {ox, oy};
}

namespace detail {

inline std::pair<double, double> augment_source(const AugmentParams& p, std::int64_t x, std::int64_t y, std::int64_t w) {
  const double fx = p.flip ? static_cast<double>(w - 1 - x) : static_cast<double>(x);
  return {p.origin_x + fx / p.scale, p.origin_y + static_cast<double>(y) / p.scale};
}

inline float sample_clamped(const Tensor& t, std::int64_t c, double sx, double sy) {
  const std::int64_t h = t.dim(1), w = t.dim(2);
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<std::int64_t>(std::floor(sx)), y0 = static_cast<std::int64_t>(std::floor(sy));
  const std::int64_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double ax = sx - static_cast<double>(x0), ay = sy - static_cast<double>(y0);
  const double top = (1.0 - ax) * t.at(c, y0, x0) + ax * t.at(c, y0, x1);
  const double bot = (1.0 - ax) * t.at(c, y1, x0) + ax * t.at(c, y1, x1);
  return static_cast<float>((1.0 - ay) * top + ay * bot);
}

inline Tensor warp_tensor(const Tensor& t, const AugmentParams& p) {
  const std::int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor out(t.shape());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const auto [sx, sy] = augment_source(p, x, y, w);
      for (std::int64_t k = 0; k < c; ++k) out.at(k, y, x) = sample_clamped(t, k, sx, sy);
    }
  return out;
}

}  // namespace detail

inline Tensor augment_frame(const Tensor& frame, const AugmentParams& p) {
  if (p.is_identity()) return frame;
  Tensor out = (p.flip || p.scale != 1.0 || p.origin_x != 0.0 || p.origin_y != 0.0) ? detail::warp_tensor(frame, p)
                                                                                      : frame.clone();
  if (p.brightness != 1.0 || p.contrast != 1.0) {
    double mean = 0.0;
    for (float v : out.data()) mean += v;
    mean /= static_cast<double>(out.size());
    for (auto& v : out.data()) {
      v = static_cast<float>(std::clamp(((v - mean) * p.contrast + mean) * p.brightness, 0.0, 1.0));
    }
  }
  return out;
}

/// Nearest-neighbour resampling of labels; pixels mapped outside the source
/// become background. Flips swap class ids per the taxonomy pairing.
inline SegMap augment_segmap(const SegMap& map, const AugmentParams& p, const ClassTaxonomy& taxonomy) {
  if (p.is_identity()) return map;
  SegMap out(map.h, map.w);
  for (std::int64_t y = 0; y < map.h; ++y)
    for (std::int64_t x = 0; x < map.w; ++x) {
      const auto [sx, sy] = detail::augment_source(p, x, y, map.w);
      const auto ix = static_cast<std::int64_t>(std::lround(sx)), iy = static_cast<std::int64_t>(std::lround(sy));
      if (ix < 0 || iy < 0 || ix >= map.w || iy >= map.h) continue;
      int label = map.at(iy, ix);
      if (p.flip && label != 0) label = taxonomy.flipped(label);
      out.at(y, x) = static_cast<std::uint8_t>(label);
    }
  return out;
}

/// Flow vectors are resampled and rescaled; u is negated under a flip.
inline Tensor augment_flow(const Tensor& flow, const AugmentParams& p) {
  if (p.flip == false && p.scale == 1.0 && p.origin_x == 0.0 && p.origin_y == 0.0) return flow;
  Tensor out = detail::warp_tensor(flow, p);
  const std::int64_t hw = flow.dim(1) * flow.dim(2);
  for (std::int64_t i = 0; i < hw; ++i) {
    out[i] = static_cast<float>(out[i] * p.scale * (p.flip ? -1.0 : 1.0));
    out[hw + i] = static_cast<float>(out[hw + i] * p.scale);
  }
  return out;
}

inline Tensor augment_depth(const Tensor& depth, const AugmentParams& p) {
  if (p.flip == false && p.scale == 1.0 && p.origin_x == 0.0 && p.origin_y == 0.0) return depth;
  return detail::warp_tensor(depth, p);
}

inline KeypointAnnotation augment_keypoints(const KeypointAnnotation& ann, const AugmentParams& p, std::int64_t h,
                                            std::int64_t w, const ClassTaxonomy& taxonomy) {
  KeypointAnnotation out = ann;
  for (auto& k : out.keypoints) {
    std::tie(k.x, k.y) = augment_point(p, k.x, k.y, w);
    if (p.flip) k.class_id = taxonomy.flipped(k.class_id);
    if (k.x < 0.0 || k.y < 0.0 || k.x > static_cast<double>(w - 1) || k.y > static_cast<double>(h - 1)) k.visible = false;
  }
  return out;
}

struct AugmentSample {
  Tensor frame;
  SegMap target;
  std::vector<Tensor> flows;
  std::vector<Tensor> depths;
};

/// Applies one draw jointly: geometry to everything, photometric jitter to
/// the frame only.
inline AugmentSample augment(const AugmentSample& in, std::uint64_t seed, const ClassTaxonomy& taxonomy,
                             const AugmentConfig& cfg = {}) {
  const AugmentParams p = draw_augment(seed, in.frame.dim(1), in.frame.dim(2), cfg);
  AugmentSample out;
  out.frame = augment_frame(in.frame, p);
  out.target = augment_segmap(in.target, p, taxonomy);
  for (const auto& f : in.flows) out.flows.push_back(augment_flow(f, p));
  for (const auto& d : in.depths) out.depths.push_back(augment_depth(d, p));
  return out;
}

// ---------------------------------------------------------------------------
// Videos and windows.

/// Frames of one video in temporal order (index == frame number) plus the
/// annotated subset.
struct VideoData {
  std::string id;
  std::vector<Tensor> frames;
  std::vector<KeypointAnnotation> annotations;

  std::int64_t height() const { return frames.empty() ? 0 : frames.front().dim(1); }
  std::int64_t width() const { return frames.empty() ? 0 : frames.front().dim(2); }
};

/// K consecutive frames ending at the annotated frame t, ordered past to
/// current. flows[j] maps the current frame onto frames[j] (j < K-1);
/// depths[j] belongs to frames[j].
struct ClipWindow {
  std::string video_id;
  int t = 0;
  std::vector<int> frame_indices;
  std::vector<Tensor> frames;
  std::vector<Tensor> flows;
  std::vector<Tensor> depths;
  SegMap target;
  KeypointAnnotation annotation;

  int k() const { return static_cast<int>(frames.size()); }
};

/// Frame indices (t-K+1 .. t), clamped to the first frame.
inline std::vector<int> window_indices(int t, int k) {
  std::vector<int> idx;
  for (int i = k - 1; i >= 0; --i) idx.push_back(std::max(0, t - i));
  return idx;
}

/// One window per annotated frame. Flows and depths are left empty for a
/// provider to fill.
inline std::vector<ClipWindow> make_windows(const VideoData& video, int k, const MaskSpec& mask) {
  if (k < 2) throw UsageError("make_windows: K must be >= 2, got " + std::to_string(k));
  if (video.frames.empty()) throw ValidationError("make_windows: video " + video.id + " has no frames");
  std::vector<ClipWindow> out;
  for (const auto& ann : video.annotations) {
    if (ann.frame_index < 0 || ann.frame_index >= static_cast<int>(video.frames.size())) {
      throw ValidationError("make_windows: annotated frame " + std::to_string(ann.frame_index) + " of video " +
                            video.id + " has no image");
    }
    ClipWindow win;
    win.video_id = video.id;
    win.t = ann.frame_index;
    win.frame_indices = window_indices(ann.frame_index, k);
    for (int i : win.frame_indices) win.frames.push_back(video.frames[static_cast<std::size_t>(i)]);
    win.target = rasterize_masks(ann, mask, video.height(), video.width());
    win.annotation = ann;
    out.push_back(std::move(win));
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset layout:
//   taxonomy.json
//   annotations/<vid>.json
//   videos/<vid>/frames/%06d.png
//   videos/<vid>/flow/%06d_to_%06d.flo   (current_to_past)
//   videos/<vid>/depth/%06d.pfm
//   videos/<vid>/masks/%06d.png          (written by `prepare`)

namespace layout {

inline std::string frame_name(int idx, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.%s", idx, ext);
  return buf;
}

inline fs::path taxonomy(const fs::path& root) { return root / "taxonomy.json"; }
inline fs::path annotations(const fs::path& root, const std::string& vid) { return root / "annotations" / (vid + ".json"); }
inline fs::path video_dir(const fs::path& root, const std::string& vid) { return root / "videos" / vid; }
inline fs::path frame(const fs::path& root, const std::string& vid, int idx) {
  return video_dir(root, vid) / "frames" / frame_name(idx, "png");
}
inline fs::path depth(const fs::path& root, const std::string& vid, int idx) {
  return video_dir(root, vid) / "depth" / frame_name(idx, "pfm");
}
inline fs::path mask(const fs::path& root, const std::string& vid, int idx) {
  return video_dir(root, vid) / "masks" / frame_name(idx, "png");
}
inline fs::path flow(const fs::path& root, const std::string& vid, int current, int past) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%06d_to_%06d.flo", current, past);
  return video_dir(root, vid) / "flow" / buf;
}

}  // namespace layout

struct Dataset {
  fs::path root;
  ClassTaxonomy taxonomy;
  std::vector<std::string> video_ids;
};

inline Dataset open_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  Dataset ds;
  ds.root = root;
  ds.taxonomy = load_taxonomy(layout::taxonomy(root));
  const fs::path ann_dir = root / "annotations";
  if (!fs::is_directory(ann_dir)) throw ValidationError("dataset has no annotations/ directory: " + root.string());
  for (const auto& e : fs::directory_iterator(ann_dir)) {
    if (e.path().extension() == ".json") ds.video_ids.push_back(e.path().stem().string());
  }
  std::sort(ds.video_ids.begin(), ds.video_ids.end());
  return ds;
}

/// Number of consecutive frames 0..N-1 present on disk.
inline int count_frames(const Dataset& ds, const std::string& vid) {
  int n = 0;
  while (fs::exists(layout::frame(ds.root, vid, n))) ++n;
  return n;
}

inline VideoData load_video(const Dataset& ds, const std::string& vid) {
  VideoData v;
  v.id = vid;
  const int n = count_frames(ds, vid);
  if (n == 0) throw ValidationError("video " + vid + " has no frames under " + (layout::video_dir(ds.root, vid) / "frames").string());
  for (int i = 0; i < n; ++i) {
    v.frames.push_back(io::read_png(layout::frame(ds.root, vid, i)));
    if (v.frames.back().shape() != v.frames.front().shape()) {
      throw ValidationError("video " + vid + ": frame " + std::to_string(i) + " has size " +
                            shape_str(v.frames.back().shape()) + ", expected " + shape_str(v.frames.front().shape()));
    }
  }
  v.annotations = load_annotations(layout::annotations(ds.root, vid), ds.taxonomy, FrameSize{v.height(), v.width()});
  for (const auto& a : v.annotations) {
    if (a.frame_index >= n) {
      throw ValidationError("video " + vid + ": annotation for frame " + std::to_string(a.frame_index) +
                            " but only " + std::to_string(n) + " frames exist");
    }
  }
  std::sort(v.annotations.begin(), v.annotations.end(),
            [](const KeypointAnnotation& a, const KeypointAnnotation& b) { return a.frame_index < b.frame_index; });
  return v;
}

}  // namespace kptrack
