#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "kptrack/autodiff.hpp"
#include "kptrack/dataio.hpp"
#include "kptrack/error.hpp"
#include "kptrack/image_io.hpp"
#include "kptrack/ops.hpp"
#include "kptrack/tensor.hpp"

// Flow maps use the current->past convention: flow[:, y, x] is the
// displacement (px, full resolution) from pixel (x, y) of frame t to the
// matching point in an earlier frame, so grid_sample_flow(past, flow) aligns
// the past frame with the current one.

namespace kptrack {

/// Bilinear upsampling by integer factor f followed by scaling the
/// displacements by f.
inline Tensor upscale_flow(const Tensor& flow_low, int f) {
  require_rank(flow_low, 3, "upscale_flow");
  if (flow_low.dim(0) != 2) throw ShapeError("upscale_flow: expected [2,H,W], got " + shape_str(flow_low.shape()));
  if (f < 1) throw ShapeError("upscale_flow: factor must be >= 1");
  if (f == 1) return flow_low.clone();
  NoGradScope no_grad;
  return ops::scale(ops::bilinear_upsample(flow_low, f), static_cast<float>(f));
}

/// As above, checking that the result matches the full-resolution size.
inline Tensor upscale_flow(const Tensor& flow_low, int f, std::int64_t h, std::int64_t w) {
  require_rank(flow_low, 3, "upscale_flow");
  if (flow_low.dim(1) * f != h || flow_low.dim(2) * f != w) {
    throw ShapeError("upscale_flow: " + shape_str(flow_low.shape()) + " x" + std::to_string(f) + " does not give " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  return upscale_flow(flow_low, f);
}

/// f x f box average with displacements expressed in low-resolution pixels.
inline Tensor downsample_flow(const Tensor& flow, int f) {
  require_rank(flow, 3, "downsample_flow");
  if (f < 1) throw ShapeError("downsample_flow: factor must be >= 1");
  const std::int64_t c = flow.dim(0), h = flow.dim(1), w = flow.dim(2);
  if (h % f != 0 || w % f != 0) {
    throw ShapeError("downsample_flow: " + shape_str(flow.shape()) + " not divisible by " + std::to_string(f));
  }
  Tensor out(Shape{c, h / f, w / f});
  const double norm = 1.0 / (static_cast<double>(f) * f * f);
  for (std::int64_t k = 0; k < c; ++k)
    for (std::int64_t y = 0; y < h / f; ++y)
      for (std::int64_t x = 0; x < w / f; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < f; ++dy)
          for (int dx = 0; dx < f; ++dx) acc += flow.at(k, y * f + dy, x * f + dx);
        out.at(k, y, x) = static_cast<float>(acc * norm);
      }
  return out;
}

/// Per-frame min-max normalization to [0,1]; constant maps become zeros.
inline Tensor normalize_depth(const Tensor& depth) {
  Tensor out = depth.clone();
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (float v : out.data()) {
    if (!std::isfinite(v)) throw ValidationError("depth map contains non-finite values");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi - lo;
  for (auto& v : out.data()) v = range > 0.0f ? (v - lo) / range : 0.0f;
  return out;
}

/// Source of flow and depth maps for a video.
class FlowDepthProvider {
 public:
  virtual ~FlowDepthProvider() = default;

  /// Flow from frame t to frame `past` (past < t), full resolution.
  virtual Tensor flow(const std::string& video_id, int t, int past) const = 0;
  /// Unnormalized depth for frame t.
  virtual Tensor raw_depth(const std::string& video_id, int t) const = 0;

  /// Flows t->t-1, ..., t->t-(K-1) (nearest first). Indices clamp to frame 0;
  /// a flow onto the same frame is zero.
  std::vector<Tensor> get_flows(const std::string& video_id, int t, int k) const {
    check_args(t, k);
    std::vector<Tensor> out;
    Tensor zero;
    for (int i = 1; i < k; ++i) {
      const int past = std::max(0, t - i);
      if (past == t) {
        if (!zero.defined()) {
          const Tensor d = raw_depth(video_id, t);
          zero = Tensor(Shape{2, d.dim(1), d.dim(2)});
        }
        out.push_back(zero);
      } else {
        out.push_back(flow(video_id, t, past));
      }
    }
    return out;
  }

  /// K normalized depth maps ordered past to current.
  std::vector<Tensor> get_depths(const std::string& video_id, int t, int k) const {
    check_args(t, k);
    std::vector<Tensor> out;
    for (int idx : window_indices(t, k)) out.push_back(normalize_depth(raw_depth(video_id, idx)));
    return out;
  }

  /// Fills window.flows (aligned with window.frames[0..K-2]) and window.depths.
  void fill(ClipWindow& window) const {
    const int k = window.k();
    auto flows = get_flows(window.video_id, window.t, k);
    window.flows.assign(flows.rbegin(), flows.rend());
    window.depths = get_depths(window.video_id, window.t, k);
  }

 private:
  static void check_args(int t, int k) {
    if (t < 0) throw UsageError("frame index must be >= 0, got " + std::to_string(t));
    if (k < 2) throw UsageError("window length K must be >= 2, got " + std::to_string(k));
  }
};

/// Reads precomputed `flow/%06d_to_%06d.flo` and `depth/%06d.pfm` files.
/// With downsample_factor f > 1 the flow files hold reduced-scale flow and
/// are upscaled on read.
class FileProvider final : public FlowDepthProvider {
 public:
  explicit FileProvider(std::filesystem::path root, int downsample_factor = 1)
      : root_(std::move(root)), factor_(downsample_factor) {
    if (factor_ < 1) throw UsageError("downsample_factor must be >= 1");
  }

  Tensor flow(const std::string& video_id, int t, int past) const override {
    const auto path = layout::flow(root_, video_id, t, past);
    if (!std::filesystem::exists(path)) {
      throw IoError("missing flow file " + path.string() + " (expected " + std::to_string(t) + "->" +
                    std::to_string(past) + " for video " + video_id + ")");
    }
    Tensor f = io::read_flo(path);
    return factor_ == 1 ? f : upscale_flow(f, factor_);
  }

  Tensor raw_depth(const std::string& video_id, int t) const override {
    const auto path = layout::depth(root_, video_id, t);
    if (!std::filesystem::exists(path)) throw IoError("missing depth file " + path.string());
    return io::read_pfm(path);
  }

  int downsample_factor() const { return factor_; }

 private:
  std::filesystem::path root_;
  int factor_;
};

}  // namespace kptrack
