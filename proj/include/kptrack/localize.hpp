#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "kptrack/dataio.hpp"
#include "kptrack/error.hpp"
#include "kptrack/tensor.hpp"

namespace kptrack {

struct Blob {
  int class_id = 0;
  std::vector<std::int64_t> pixels;  // row-major indices, ascending
  std::int64_t area = 0;
  double x = 0.0;  // centroid: mean of member pixel centres
  double y = 0.0;

  std::int64_t first_pixel() const { return pixels.front(); }
};

/// Maximal 8-connected components of the non-zero pixels of `mask`, in order
/// of their first pixel (row-major). Two-pass union-find.
inline std::vector<Blob> connected_components(const std::vector<std::uint8_t>& mask, std::int64_t h, std::int64_t w,
                                              int class_id = 1) {
  if (static_cast<std::int64_t>(mask.size()) != h * w) throw ShapeError("connected_components: mask size mismatch");
  std::vector<std::int64_t> parent(mask.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::int64_t i) {
    while (parent[static_cast<std::size_t>(i)] != i) {
      auto& p = parent[static_cast<std::size_t>(i)];
      p = parent[static_cast<std::size_t>(p)];
      i = p;
    }
    return i;
  };
  auto unite = [&](std::int64_t a, std::int64_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent[static_cast<std::size_t>(a)] = b;  // root is the smaller index
  };
  auto on = [&](std::int64_t y, std::int64_t x) {
    return y >= 0 && x >= 0 && x < w && mask[static_cast<std::size_t>(y * w + x)] != 0;
  };
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      if (!on(y, x)) continue;
      const std::int64_t i = y * w + x;
      if (on(y, x - 1)) unite(i, i - 1);
      if (on(y - 1, x - 1)) unite(i, i - w - 1);
      if (on(y - 1, x)) unite(i, i - w);
      if (on(y - 1, x + 1)) unite(i, i - w + 1);
    }
  std::vector<Blob> blobs;
  std::vector<std::int64_t> slot(mask.size(), -1);
  for (std::int64_t i = 0; i < h * w; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const auto r = static_cast<std::size_t>(find(i));
    if (slot[r] < 0) {
      slot[r] = static_cast<std::int64_t>(blobs.size());
      blobs.emplace_back();
      blobs.back().class_id = class_id;
    }
    blobs[static_cast<std::size_t>(slot[r])].pixels.push_back(i);
  }
  for (auto& b : blobs) {
    double sx = 0.0, sy = 0.0;
    for (auto i : b.pixels) {
      sx += static_cast<double>(i % w);
      sy += static_cast<double>(i / w);
    }
    b.area = static_cast<std::int64_t>(b.pixels.size());
    b.x = sx / static_cast<double>(b.area);
    b.y = sy / static_cast<double>(b.area);
  }
  return blobs;
}

/// Per-pixel argmax over channels (ties go to the lower class index).
inline SegMap argmax_labels(const Tensor& probs) {
  require_rank(probs, 3, "argmax_labels");
  const std::int64_t c = probs.dim(0), h = probs.dim(1), w = probs.dim(2), hw = h * w;
  if (c > 255) throw ShapeError("argmax_labels: too many classes");
  SegMap m(h, w);
  for (std::int64_t i = 0; i < hw; ++i) {
    int best = 0;
    float bv = probs[i];
    for (std::int64_t k = 1; k < c; ++k)
      if (probs[k * hw + i] > bv) {
        bv = probs[k * hw + i];
        best = static_cast<int>(k);
      }
    m.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return m;
}

struct Detection {
  int class_id = 0;
  double x = 0.0;
  double y = 0.0;
  double confidence = 1.0;
  bool operator==(const Detection&) const = default;
};

struct TrackResult {
  std::string video_id;
  int frame_index = 0;
  std::vector<Detection> detections;
  bool operator==(const TrackResult&) const = default;
};

inline constexpr std::int64_t kDefaultMinArea = 3;

namespace detail {

inline TrackResult extract_from_labels(const SegMap& labels, const ClassTaxonomy& taxonomy, std::int64_t min_area,
                                       const Tensor* probs) {
  TrackResult out;
  std::vector<std::uint8_t> mask(labels.labels.size());
  const std::int64_t hw = labels.h * labels.w;
  for (int c = 1; c < taxonomy.num_classes(); ++c) {
    bool any = false;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = labels.labels[i] == c;
      any = any || mask[i];
    }
    if (!any) continue;
    auto blobs = connected_components(mask, labels.h, labels.w, c);
    std::stable_sort(blobs.begin(), blobs.end(), [](const Blob& a, const Blob& b) {
      return a.area != b.area ? a.area > b.area : a.first_pixel() < b.first_pixel();
    });
    int taken = 0;
    for (const auto& b : blobs) {
      if (taken >= taxonomy.max_instances_of(c) || b.area < min_area) break;
      Detection d{c, b.x, b.y, 1.0};
      if (probs) {
        double s = 0.0;
        for (auto i : b.pixels) s += (*probs)[c * hw + i];
        d.confidence = s / static_cast<double>(b.area);
      }
      out.detections.push_back(d);
      ++taken;
    }
  }
  return out;
}

}  // namespace detail

/// Per keypoint class: blobs by descending area (ties: earlier first pixel);
/// the top max_instances blobs with area >= min_area become detections.
inline TrackResult extract_keypoints(const SegMap& labels, const ClassTaxonomy& taxonomy,
                                     std::int64_t min_area = kDefaultMinArea) {
  return detail::extract_from_labels(labels, taxonomy, min_area, nullptr);
}

/// Probability input: argmax first; confidence is the mean class
/// probability over the blob.
inline TrackResult extract_keypoints(const Tensor& probs, const ClassTaxonomy& taxonomy,
                                     std::int64_t min_area = kDefaultMinArea) {
  if (probs.dim(0) != taxonomy.num_classes()) {
    throw ValidationError("extract_keypoints: probmap has " + std::to_string(probs.dim(0)) +
                          " channels but the taxonomy has " + std::to_string(taxonomy.num_classes()) + " classes");
  }
  const SegMap labels = argmax_labels(probs);
  return detail::extract_from_labels(labels, taxonomy, min_area, &probs);
}

// ---------------------------------------------------------------------------
// JSON lines: {"video": str, "frame": int, "detections": [{"class", "x", "y", "conf"}]}

inline json to_json(const TrackResult& r, const ClassTaxonomy& taxonomy) {
  json dets = json::array();
  for (const auto& d : r.detections) {
    dets.push_back({{"class", taxonomy.name(d.class_id)}, {"x", d.x}, {"y", d.y}, {"conf", d.confidence}});
  }
  return {{"video", r.video_id}, {"frame", r.frame_index}, {"detections", dets}};
}

inline void write_track_results(const std::filesystem::path& path, const std::vector<TrackResult>& results,
                                const ClassTaxonomy& taxonomy) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& r : results) os << to_json(r, taxonomy).dump() << "\n";
}

inline std::vector<TrackResult> read_track_results(const std::filesystem::path& path, const ClassTaxonomy& taxonomy) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<TrackResult> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    try {
      TrackResult r;
      r.video_id = j.value("video", std::string{});
      r.frame_index = j.at("frame").get<int>();
      for (const auto& d : j.at("detections")) {
        const std::string cls = d.at("class").get<std::string>();
        const auto id = taxonomy.find(cls);
        if (!id) throw ValidationError(where + ": class \"" + cls + "\" is not in the taxonomy");
        r.detections.push_back({*id, d.at("x").get<double>(), d.at("y").get<double>(), d.value("conf", 1.0)});
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace kptrack
