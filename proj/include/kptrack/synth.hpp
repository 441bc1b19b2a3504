#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kptrack/dataio.hpp"
#include "kptrack/error.hpp"
#include "kptrack/flowdepth.hpp"
#include "kptrack/image_io.hpp"
#include "kptrack/tensor.hpp"

// Synthetic articulated-tool scenes with exact keypoints, flow and depth.
//
// Each tool is a body (long shaft leaving the frame, a lighter wrist section
// and a joint disc at the head) plus two jaws hinged at the head. Poses are
// linear in time (translation, rotation) with a sinusoidal jaw opening, so
// positions at any time and the current->past flow are closed-form.

namespace kptrack::synth {

struct SceneConfig {
  std::int64_t height = 128;
  std::int64_t width = 160;
  int num_tools = 2;
  int frames_per_clip = 20;
  double motion_amplitude = 1.0;    // translation speed, px/frame
  double rotation_rate = 0.01;      // max |angular speed|, rad/frame
  double clasper_amplitude = 0.25;  // jaw opening swing, rad
  double clasper_period = 12.0;     // frames
  std::uint64_t texture_seed = 1;
  std::string taxonomy = "endovis";  // or "jigsaws"
  double mask_radius = 5.0;
  bool hard = false;                 // motion blur + drifting background
  double drift = 0.5;                // background drift speed in hard mode, px/frame
  std::optional<std::array<double, 2>> fixed_velocity;  // overrides the sampled velocity of every tool

  ClassTaxonomy class_taxonomy() const {
    if (taxonomy == "endovis") return ClassTaxonomy::endovis();
    if (taxonomy == "jigsaws") return ClassTaxonomy::jigsaws();
    throw ValidationError("unknown synthetic taxonomy \"" + taxonomy + "\" (expected endovis or jigsaws)");
  }

  void validate() const {
    if (height < 32 || width < 32) throw ValidationError("scene must be at least 32x32");
    if (num_tools != 1 && num_tools != 2) throw ValidationError("num_tools must be 1 or 2");
    if (frames_per_clip < 1) throw ValidationError("frames_per_clip must be >= 1");
    if (motion_amplitude < 0.0 || rotation_rate < 0.0 || clasper_amplitude < 0.0 || drift < 0.0) {
      throw ValidationError("motion parameters must be non-negative");
    }
    if (clasper_period <= 0.0) throw ValidationError("clasper_period must be positive");
    if (clasper_amplitude > 0.6) throw ValidationError("clasper_amplitude must be <= 0.6 rad");
    if (!(mask_radius > 0.0)) throw ValidationError("mask_radius must be positive");
    class_taxonomy();
  }
};

inline json to_json(const SceneConfig& c) {
  json j{{"height", c.height},
         {"width", c.width},
         {"num_tools", c.num_tools},
         {"frames_per_clip", c.frames_per_clip},
         {"motion_amplitude", c.motion_amplitude},
         {"rotation_rate", c.rotation_rate},
         {"clasper_amplitude", c.clasper_amplitude},
         {"clasper_period", c.clasper_period},
         {"texture_seed", c.texture_seed},
         {"taxonomy", c.taxonomy},
         {"mask_radius", c.mask_radius},
         {"hard", c.hard},
         {"drift", c.drift}};
  if (c.fixed_velocity) j["fixed_velocity"] = *c.fixed_velocity;
  return j;
}

inline SceneConfig scene_config_from_json(const json& j) {
  SceneConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.num_tools = j.value("num_tools", c.num_tools);
    c.frames_per_clip = j.value("frames_per_clip", c.frames_per_clip);
    c.motion_amplitude = j.value("motion_amplitude", c.motion_amplitude);
    c.rotation_rate = j.value("rotation_rate", c.rotation_rate);
    c.clasper_amplitude = j.value("clasper_amplitude", c.clasper_amplitude);
    c.clasper_period = j.value("clasper_period", c.clasper_period);
    c.texture_seed = j.value("texture_seed", c.texture_seed);
    c.taxonomy = j.value("taxonomy", c.taxonomy);
    c.mask_radius = j.value("mask_radius", c.mask_radius);
    c.hard = j.value("hard", c.hard);
    c.drift = j.value("drift", c.drift);
    if (j.contains("fixed_velocity")) c.fixed_velocity = j.at("fixed_velocity").get<std::array<double, 2>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("scene config: ") + e.what());
  }
  c.validate();
  return c;
}

enum class Part : std::uint8_t { Background = 0, Shaft, Wrist, Head, RightJaw, LeftJaw };

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline double lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  const auto h = splitmix(seed ^ splitmix(static_cast<std::uint64_t>(ix) * 0x632BE59BD9B4E019ull ^
                                          static_cast<std::uint64_t>(iy) * 0x85157AF5ull));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Smooth value noise in [0,1].
inline double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  const double ax = smooth(x - fx), ay = smooth(y - fy);
  const double a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
  const double c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
  return (1 - ay) * ((1 - ax) * a + ax * b) + ay * ((1 - ax) * c + ax * d);
}

inline double fbm(std::uint64_t seed, double x, double y) {
  return 0.65 * value_noise(seed, x, y) + 0.35 * value_noise(seed + 17, 2.1 * x, 2.1 * y);
}

struct Vec2 {
  double x = 0.0, y = 0.0;
};

inline Vec2 rotate(Vec2 v, double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

}  // namespace detail

struct ToolPose {
  double x = 0.0, y = 0.0;  // head (jaw hinge)
  double phi = 0.0;         // direction from the head along the shaft
  double opening = 0.0;     // angle between the jaws
};

/// Geometry in pixels, scaled with the frame size.
struct ToolGeometry {
  double unit = 1.0;
  double shaft_radius() const { return 4.0 * unit; }
  double head_radius() const { return 5.0 * unit; }
  double jaw_radius() const { return 1.8 * unit; }
  double jaw_length() const { return 13.0 * unit; }
  double end_point() const { return 12.0 * unit; }    // wrist/shaft colour transition
  double shaft_point() const { return 34.0 * unit; }  // marker band
  double band_half_width() const { return 2.5 * unit; }
  double shaft_length(std::int64_t h, std::int64_t w) const { return 2.0 * static_cast<double>(h + w); }
};

struct ToolTrack {
  int side = 0;  // 0 left tool, 1 right tool
  double x0 = 0.0, y0 = 0.0, vx = 0.0, vy = 0.0;
  double phi0 = 0.0, omega = 0.0;
  double opening0 = 0.6, opening_amp = 0.0, opening_freq = 0.0, opening_phase = 0.0;
  double depth = 0.1;

  ToolPose at(double t) const {
    return {x0 + vx * t, y0 + vy * t, phi0 + omega * t, opening0 + opening_amp * std::sin(opening_freq * t + opening_phase)};
  }
};

struct Hit {
  int tool = -1;
  Part part = Part::Background;
  double along = 0.0;  // material coordinates in the part frame
  double perp = 0.0;
  double depth = 1.0;
};

struct NamedPoint {
  std::string part;  // EndPoint, ShaftPoint, HeadPoint, RightClasperPoint, LeftClasperPoint
  double x = 0.0, y = 0.0;
};

class Scene {
 public:
  Scene(const SceneConfig& cfg, std::uint64_t seed) : cfg_(cfg), taxonomy_(cfg.class_taxonomy()) {
    cfg_.validate();
    geom_.unit = static_cast<double>(std::min(cfg_.height, cfg_.width)) / 128.0;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    if (cfg_.hard) {
      const double a = 2.0 * std::numbers::pi * u01(rng);
      drift_ = {cfg_.drift * std::cos(a), cfg_.drift * std::sin(a)};
    }
    for (int attempt = 0; attempt < 500; ++attempt) {
      tracks_.clear();
      for (int k = 0; k < cfg_.num_tools; ++k) tracks_.push_back(sample_track(k, rng));
      if (valid_placement()) return;
    }
    throw ValidationError("cannot place tools so keypoints stay " + std::to_string(cfg_.mask_radius) +
                          " px inside a " + std::to_string(cfg_.width) + "x" + std::to_string(cfg_.height) +
                          " frame for " + std::to_string(cfg_.frames_per_clip) +
                          " frames; reduce motion_amplitude or frames_per_clip");
  }

  const SceneConfig& config() const { return cfg_; }
  const ClassTaxonomy& taxonomy() const { return taxonomy_; }
  const std::vector<ToolTrack>& tracks() const { return tracks_; }
  const ToolGeometry& geometry() const { return geom_; }
  int num_frames() const { return cfg_.frames_per_clip; }

  /// Keypoints of tool k at time t (all exact analytic positions).
  std::vector<NamedPoint> tool_points(int k, double t) const {
    const ToolPose p = tracks_[static_cast<std::size_t>(k)].at(t);
    const detail::Vec2 axis{std::cos(p.phi), std::sin(p.phi)};
    auto on_shaft = [&](double s) { return detail::Vec2{p.x + s * axis.x, p.y + s * axis.y}; };
    const auto rtip = jaw_tip(p, +1), ltip = jaw_tip(p, -1);
    const auto e = on_shaft(geom_.end_point()), s = on_shaft(geom_.shaft_point());
    return {{"EndPoint", e.x, e.y},
            {"ShaftPoint", s.x, s.y},
            {"HeadPoint", p.x, p.y},
            {"RightClasperPoint", rtip.x, rtip.y},
            {"LeftClasperPoint", ltip.x, ltip.y}};
  }

  KeypointAnnotation keypoints(int t, const std::string& video_id = {}) const {
    KeypointAnnotation ann;
    ann.video_id = video_id;
    ann.frame_index = t;
    const bool jig = cfg_.taxonomy == "jigsaws";
    for (int k = 0; k < cfg_.num_tools; ++k) {
      const std::string prefix = tracks_[static_cast<std::size_t>(k)].side == 0 ? "L_" : "R_";
      for (const auto& np : tool_points(k, t)) {
        std::string name;
        if (!jig) {
          name = np.part;
        } else if (np.part == "RightClasperPoint" || np.part == "LeftClasperPoint") {
          name = "ToolTip";
        } else if (np.part == "HeadPoint") {
          name = "JawBase";
        } else {
          continue;
        }
        ann.keypoints.push_back({taxonomy_.class_id(prefix + name), np.x, np.y, true});
      }
    }
    return ann;
  }

  /// Front-most surface at (x, y) and time t.
  Hit hit(double x, double y, double t) const {
    Hit best;
    best.depth = background_depth(x, y, t);
    for (int k = 0; k < static_cast<int>(tracks_.size()); ++k) {
      Hit h = hit_tool(k, x, y, t);
      if (h.part != Part::Background && h.depth < best.depth) best = h;
    }
    return best;
  }

  /// RGB frame in [0,1], 3x3 supersampled; hard mode averages four sub-frame times.
  Tensor render(int t) const {
    const std::int64_t h = cfg_.height, w = cfg_.width;
    Tensor img(Shape{3, h, w});
    const std::vector<double> times = cfg_.hard ? std::vector<double>{t - 0.375, t - 0.25, t - 0.125, double(t)}
                                                : std::vector<double>{double(t)};
    constexpr int kSub = 3;
    const double norm = 1.0 / static_cast<double>(kSub * kSub * times.size());
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        std::array<double, 3> acc{0, 0, 0};
        for (double tau : times)
          for (int sy = 0; sy < kSub; ++sy)
            for (int sx = 0; sx < kSub; ++sx) {
              const double px = static_cast<double>(x) + (sx - 1) / 3.0, py = static_cast<double>(y) + (sy - 1) / 3.0;
              const auto c = shade(hit(px, py, tau), px, py, tau);
              for (int ch = 0; ch < 3; ++ch) acc[static_cast<std::size_t>(ch)] += c[static_cast<std::size_t>(ch)];
            }
        for (int ch = 0; ch < 3; ++ch)
          img.at(ch, y, x) = static_cast<float>(std::clamp(acc[static_cast<std::size_t>(ch)] * norm, 0.0, 1.0));
      }
    return img;
  }

  /// Per-pixel owner at the pixel centre: 0 background, else 1 + tool*8 + part.
  std::vector<std::uint8_t> occupancy(int t) const {
    std::vector<std::uint8_t> occ(static_cast<std::size_t>(cfg_.height * cfg_.width), 0);
    for (std::int64_t y = 0; y < cfg_.height; ++y)
      for (std::int64_t x = 0; x < cfg_.width; ++x) {
        const Hit hh = hit(static_cast<double>(x), static_cast<double>(y), t);
        if (hh.part != Part::Background) {
          occ[static_cast<std::size_t>(y * cfg_.width + x)] =
              static_cast<std::uint8_t>(1 + hh.tool * 8 + static_cast<int>(hh.part));
        }
      }
    return occ;
  }

  /// Current->past flow: pixel (x,y) of frame t shows the surface point that
  /// sits at (x+u, y+v) in frame `past`.
  Tensor flow(int t, int past) const {
    Tensor f(Shape{2, cfg_.height, cfg_.width});
    if (t == past) return f;
    for (std::int64_t y = 0; y < cfg_.height; ++y)
      for (std::int64_t x = 0; x < cfg_.width; ++x) {
        const double px = static_cast<double>(x), py = static_cast<double>(y);
        const auto [qx, qy] = track_point(hit(px, py, t), px, py, t, past);
        f.at(0, y, x) = static_cast<float>(qx - px);
        f.at(1, y, x) = static_cast<float>(qy - py);
      }
    return f;
  }

  /// Analytic depth in [0,1]: tools within [0.05, 0.5], background within [0.7, 1].
  Tensor depth(int t) const {
    Tensor d(Shape{1, cfg_.height, cfg_.width});
    for (std::int64_t y = 0; y < cfg_.height; ++y)
      for (std::int64_t x = 0; x < cfg_.width; ++x)
        d.at(0, y, x) = static_cast<float>(hit(static_cast<double>(x), static_cast<double>(y), t).depth);
    return d;
  }

  /// Upper bound on the per-frame displacement of any keypoint.
  double max_keypoint_step() const {
    const double speed = cfg_.fixed_velocity ? std::hypot((*cfg_.fixed_velocity)[0], (*cfg_.fixed_velocity)[1])
                                             : cfg_.motion_amplitude;
    const double turn = cfg_.rotation_rate * std::max(geom_.shaft_point(), geom_.jaw_length());
    const double jaw = 0.5 * geom_.jaw_length() * cfg_.clasper_amplitude * 2.0 * std::numbers::pi / cfg_.clasper_period;
    return speed + turn + jaw;
  }

 private:
  detail::Vec2 jaw_direction(const ToolPose& p, int sign) const {
    // Jaws point away from the shaft, opened symmetrically.
    return detail::rotate({-std::cos(p.phi), -std::sin(p.phi)}, sign * 0.5 * p.opening);
  }

  detail::Vec2 jaw_tip(const ToolPose& p, int sign) const {
    const auto d = jaw_direction(p, sign);
    return {p.x + geom_.jaw_length() * d.x, p.y + geom_.jaw_length() * d.y};
  }

  ToolTrack sample_track(int k, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double w = static_cast<double>(cfg_.width), h = static_cast<double>(cfg_.height);
    ToolTrack tr;
    tr.side = k;
    const double fx = 0.28 + 0.18 * u01(rng);
    tr.x0 = k == 0 ? fx * w : (1.0 - fx) * w;
    tr.y0 = (0.3 + 0.4 * u01(rng)) * h;
    const double tilt = (u01(rng) - 0.5) * 1.1;
    tr.phi0 = k == 0 ? std::numbers::pi + tilt : tilt;
    const double dir = 2.0 * std::numbers::pi * u01(rng);
    tr.vx = cfg_.motion_amplitude * std::cos(dir);
    tr.vy = cfg_.motion_amplitude * std::sin(dir);
    if (cfg_.fixed_velocity) {
      tr.vx = (*cfg_.fixed_velocity)[0];
      tr.vy = (*cfg_.fixed_velocity)[1];
    }
    tr.omega = cfg_.rotation_rate * (2.0 * u01(rng) - 1.0);
    tr.opening_amp = cfg_.clasper_amplitude;
    tr.opening0 = std::max(0.55, cfg_.clasper_amplitude + 0.2);
    tr.opening_freq = 2.0 * std::numbers::pi / cfg_.clasper_period;
    tr.opening_phase = 2.0 * std::numbers::pi * u01(rng);
    tr.depth = 0.1 + 0.08 * u01(rng) + 0.04 * k;
    return tr;
  }

  bool valid_placement() const {
    const double r = cfg_.mask_radius;
    const double w = static_cast<double>(cfg_.width), h = static_cast<double>(cfg_.height);
    for (int t = 0; t < cfg_.frames_per_clip; ++t) {
      std::vector<std::vector<NamedPoint>> pts;
      for (int k = 0; k < cfg_.num_tools; ++k) {
        pts.push_back(tool_points(k, t));
        for (const auto& p : pts.back())
          if (p.x < r || p.y < r || p.x > w - 1.0 - r || p.y > h - 1.0 - r) return false;
      }
      if (cfg_.num_tools == 2) {
        // Keep the tools apart so keypoints are not occluded.
        const ToolPose a = tracks_[0].at(t), b = tracks_[1].at(t);
        if (std::hypot(a.x - b.x, a.y - b.y) < 2.0 * geom_.jaw_length() + 2.0 * r + 2.0) return false;
        for (const auto& p : pts[0])
          if (hit_tool(1, p.x, p.y, t).part != Part::Background) return false;
        for (const auto& p : pts[1])
          if (hit_tool(0, p.x, p.y, t).part != Part::Background) return false;
      }
    }
    return true;
  }

  double background_depth(double x, double y, double t) const {
    const double mx = x + drift_.x * t, my = y + drift_.y * t;
    return 0.7 + 0.3 * detail::value_noise(cfg_.texture_seed + 901, mx / (24.0 * geom_.unit), my / (24.0 * geom_.unit));
  }

  Hit hit_tool(int k, double x, double y, double t) const {
    const auto& tr = tracks_[static_cast<std::size_t>(k)];
    const ToolPose p = tr.at(t);
    const double dx = x - p.x, dy = y - p.y;
    const double ca = std::cos(p.phi), sa = std::sin(p.phi);
    const double along = dx * ca + dy * sa, perp = -dx * sa + dy * ca;
    Hit out;
    out.tool = k;
    if (std::hypot(dx, dy) <= geom_.head_radius()) {
      out.part = Part::Head;
      out.along = along;
      out.perp = perp;
      out.depth = tr.depth;
      return out;
    }
    for (int sign : {+1, -1}) {
      const auto d = jaw_direction(p, sign);
      const double ja = dx * d.x + dy * d.y, jp = -dx * d.y + dy * d.x;
      const double L = geom_.jaw_length(), r = geom_.jaw_radius();
      const bool in_body = ja >= 0.0 && ja <= L && std::abs(jp) <= r;
      const bool in_cap = std::hypot(ja - L, jp) <= r;
      if (in_body || in_cap) {
        out.part = sign > 0 ? Part::RightJaw : Part::LeftJaw;
        out.along = ja;
        out.perp = jp;
        out.depth = tr.depth - 0.04 * std::clamp(ja / L, 0.0, 1.0);
        return out;
      }
    }
    if (along >= 0.0 && along <= geom_.shaft_length(cfg_.height, cfg_.width) && std::abs(perp) <= geom_.shaft_radius()) {
      out.part = along < geom_.end_point() ? Part::Wrist : Part::Shaft;
      out.along = along;
      out.perp = perp;
      out.depth = std::min(0.5, tr.depth + 0.0025 * along / geom_.unit);
      return out;
    }
    out.tool = -1;
    out.part = Part::Background;
    return out;
  }

  /// Position at time `to` of the material point seen at (x,y) at time `from`.
  std::pair<double, double> track_point(const Hit& h, double x, double y, double from, double to) const {
    if (h.part == Part::Background) {
      // Background texture point m = p + drift * t.
      return {x + drift_.x * (from - to), y + drift_.y * (from - to)};
    }
    const ToolTrack& tr = tracks_[static_cast<std::size_t>(h.tool)];
    const ToolPose p = tr.at(to), q = tr.at(from);
    if (p.x == q.x && p.y == q.y && p.phi == q.phi && p.opening == q.opening) return {x, y};
    if (h.part == Part::RightJaw || h.part == Part::LeftJaw) {
      const auto d = jaw_direction(p, h.part == Part::RightJaw ? +1 : -1);
      return {p.x + h.along * d.x - h.perp * d.y, p.y + h.along * d.y + h.perp * d.x};
    }
    const double ca = std::cos(p.phi), sa = std::sin(p.phi);
    return {p.x + h.along * ca - h.perp * sa, p.y + h.along * sa + h.perp * ca};
  }

  std::array<double, 3> shade(const Hit& h, double x, double y, double t) const {
    const std::uint64_t ts = cfg_.texture_seed;
    const double u = geom_.unit;
    if (h.part == Part::Background) {
      const double mx = x + drift_.x * t, my = y + drift_.y * t;
      const double n = detail::fbm(ts, mx / (14.0 * u), my / (14.0 * u));
      const double vein = detail::value_noise(ts + 5, mx / (5.0 * u), my / (5.0 * u));
      return {0.45 + 0.3 * n + 0.05 * vein, 0.18 + 0.15 * n, 0.15 + 0.12 * n + 0.04 * vein};
    }
    const int side = tracks_[static_cast<std::size_t>(h.tool)].side;
    const double tex = 0.9 + 0.2 * detail::value_noise(ts + 31 + static_cast<std::uint64_t>(h.tool), h.along / (9.0 * u),
                                                         h.perp / (9.0 * u));
    std::array<double, 3> base{};
    double radius = geom_.shaft_radius();
    switch (h.part) {
      case Part::Shaft:
        base = side == 0 ? std::array<double, 3>{0.25, 0.32, 0.62} : std::array<double, 3>{0.25, 0.55, 0.35};
        if (std::abs(h.along - geom_.shaft_point()) <= geom_.band_half_width()) {
          // Two-tone marker: the dark head-side stripe makes the shaft
          // direction, and hence the tool side, visible locally.
          const bool head_side = h.along < geom_.shaft_point() - 0.2 * geom_.band_half_width();
          if (head_side) {
            base = {0.08, 0.08, 0.1};
          } else {
            base = side == 0 ? std::array<double, 3>{0.95, 0.9, 0.3} : std::array<double, 3>{0.3, 0.9, 0.95};
          }
        }
        break;
      case Part::Wrist:
        base = side == 0 ? std::array<double, 3>{0.72, 0.75, 0.85} : std::array<double, 3>{0.75, 0.85, 0.72};
        break;
      case Part::Head:
        base = {0.95, 0.95, 0.95};
        radius = geom_.head_radius();
        break;
      case Part::RightJaw:
        base = side == 0 ? std::array<double, 3>{0.2, 0.85, 0.3} : std::array<double, 3>{0.9, 0.5, 0.1};
        radius = geom_.jaw_radius();
        break;
      case Part::LeftJaw:
        base = side == 0 ? std::array<double, 3>{0.85, 0.25, 0.85} : std::array<double, 3>{0.55, 0.35, 0.95};
        radius = geom_.jaw_radius();
        break;
      case Part::Background:
        break;
    }
    const double q = std::clamp(h.perp / (radius * 1.05), -1.0, 1.0);
    const double cyl = h.part == Part::Head ? 1.0 : 0.75 + 0.25 * std::sqrt(1.0 - q * q);
    return {base[0] * cyl * tex, base[1] * cyl * tex, base[2] * cyl * tex};
  }

  SceneConfig cfg_;
  ClassTaxonomy taxonomy_;
  ToolGeometry geom_;
  detail::Vec2 drift_{};
  std::vector<ToolTrack> tracks_;
};

struct Clip {
  std::vector<Tensor> frames;
  std::vector<KeypointAnnotation> annotations;    // one per frame
  std::vector<std::vector<Tensor>> flows;         // flows[t][i-1]: t -> t-i, for i <= min(t, max_span)
  std::vector<Tensor> depths;
  std::vector<std::vector<std::uint8_t>> occupancy;
};

inline Clip gen_clip(const SceneConfig& cfg, std::uint64_t seed, int max_flow_span = 3,
                     const std::string& video_id = "clip") {
  const Scene scene(cfg, seed);
  Clip clip;
  for (int t = 0; t < scene.num_frames(); ++t) {
    clip.frames.push_back(scene.render(t));
    clip.annotations.push_back(scene.keypoints(t, video_id));
    clip.depths.push_back(scene.depth(t));
    clip.occupancy.push_back(scene.occupancy(t));
    std::vector<Tensor> f;
    for (int i = 1; i <= std::min(t, max_flow_span); ++i) f.push_back(scene.flow(t, t - i));
    clip.flows.push_back(std::move(f));
  }
  return clip;
}

struct GenOptions {
  int max_flow_span = 3;
  int flow_downsample = 1;
};

inline std::uint64_t clip_seed(std::uint64_t dataset_seed, int index) {
  return detail::splitmix(dataset_seed * 0x100000001B3ull + static_cast<std::uint64_t>(index));
}

inline std::string clip_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%03d", index);
  return buf;
}

struct GenSummary {
  int clips = 0;
  int frames = 0;
  int annotated_frames = 0;
};

/// Writes a complete dataset (frames, annotations, flows, depths, taxonomy)
/// plus synth.json describing the generator so flows can be regenerated.
inline GenSummary gen_dataset(const SceneConfig& cfg, int n_clips, std::uint64_t seed, const fs::path& root,
                              const GenOptions& opt = {}) {
  cfg.validate();
  if (n_clips < 1) throw UsageError("n_clips must be >= 1");
  if (opt.flow_downsample < 1 || cfg.height % opt.flow_downsample != 0 || cfg.width % opt.flow_downsample != 0) {
    throw UsageError("flow_downsample must be >= 1 and divide the frame size");
  }
  try {
    fs::create_directories(root);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create " + root.string() + ": " + e.what());
  }
  const ClassTaxonomy tax = cfg.class_taxonomy();
  auto write_json = [&](const fs::path& path, const json& j) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << "\n";
  };
  write_json(layout::taxonomy(root), to_json(tax));
  json meta{{"config", to_json(cfg)},
            {"seed", seed},
            {"max_flow_span", opt.max_flow_span},
            {"flow_downsample", opt.flow_downsample},
            {"videos", json::array()}};
  GenSummary summary;
  for (int i = 0; i < n_clips; ++i) {
    const std::string vid = clip_id(i);
    const std::uint64_t cs = clip_seed(seed, i);
    meta["videos"].push_back({{"id", vid}, {"seed", cs}});
    const Clip clip = gen_clip(cfg, cs, opt.max_flow_span, vid);
    for (int t = 0; t < static_cast<int>(clip.frames.size()); ++t) {
      io::write_png(layout::frame(root, vid, t), clip.frames[static_cast<std::size_t>(t)]);
      io::write_pfm(layout::depth(root, vid, t), clip.depths[static_cast<std::size_t>(t)]);
      const auto& flows = clip.flows[static_cast<std::size_t>(t)];
      for (int s = 1; s <= static_cast<int>(flows.size()); ++s) {
        const Tensor& f = flows[static_cast<std::size_t>(s - 1)];
        io::write_flo(layout::flow(root, vid, t, t - s),
                      opt.flow_downsample == 1 ? f : downsample_flow(f, opt.flow_downsample));
      }
    }
    write_annotations(layout::annotations(root, vid), clip.annotations, tax, vid);
    ++summary.clips;
    summary.frames += static_cast<int>(clip.frames.size());
    summary.annotated_frames += static_cast<int>(clip.annotations.size());
  }
  write_json(root / "synth.json", meta);
  return summary;
}

/// Exact analytic flow and depth regenerated from the generator seeds.
class OracleProvider final : public FlowDepthProvider {
 public:
  OracleProvider(const SceneConfig& cfg, const std::vector<std::pair<std::string, std::uint64_t>>& videos) {
    for (const auto& [id, seed] : videos) scenes_.emplace(id, Scene(cfg, seed));
  }

  /// Reads synth.json from a generated dataset.
  static OracleProvider from_dataset(const fs::path& root) {
    const fs::path path = root / "synth.json";
    std::ifstream is(path);
    if (!is) throw IoError("oracle provider needs " + path.string() + " (dataset not generated by synth?)");
    json j;
    try {
      j = json::parse(is);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
    std::vector<std::pair<std::string, std::uint64_t>> videos;
    for (const auto& v : j.at("videos")) videos.emplace_back(v.at("id").get<std::string>(), v.at("seed").get<std::uint64_t>());
    return OracleProvider(scene_config_from_json(j.at("config")), videos);
  }

  Tensor flow(const std::string& video_id, int t, int past) const override { return scene(video_id).flow(t, past); }
  Tensor raw_depth(const std::string& video_id, int t) const override { return scene(video_id).depth(t); }

  const Scene& scene(const std::string& video_id) const {
    auto it = scenes_.find(video_id);
    if (it == scenes_.end()) throw ValidationError("oracle provider has no video " + video_id);
    return it->second;
  }

 private:
  std::map<std::string, Scene> scenes_;
};

}  // namespace kptrack::synth
