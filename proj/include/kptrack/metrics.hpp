#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "kptrack/dataio.hpp"
#include "kptrack/error.hpp"
#include "kptrack/localize.hpp"

namespace kptrack {

enum class Outcome { TP, FP, FN };

inline const char* to_string(Outcome o) { return o == Outcome::TP ? "TP" : o == Outcome::FP ? "FP" : "FN"; }

struct Point {
  double x = 0.0, y = 0.0;
};

struct MatchRecord {
  std::string video_id;
  int frame_index = 0;
  int class_id = 0;
  std::optional<Point> gt;
  std::optional<Point> pred;
  std::optional<double> error;
  Outcome outcome = Outcome::FN;
};

/// 20 px at 576-px frame height, scaled to other resolutions.
inline double default_tau(std::int64_t h, std::int64_t w) {
  return 20.0 * static_cast<double>(std::min(h, w)) / 576.0;
}

/// Greedy per-class matching by ascending distance among pairs within tau.
/// Leftover predictions are FP, leftover visible ground truth is FN.
inline std::vector<MatchRecord> match_frame(const TrackResult& preds, const KeypointAnnotation& gts, double tau,
                                            int num_classes) {
  if (!(tau > 0.0)) throw UsageError("match_frame: tau must be positive");
  std::map<int, std::vector<Point>> pred_by_class, gt_by_class;
  for (const auto& d : preds.detections) {
    if (d.class_id < 1 || d.class_id >= num_classes) {
      throw ValidationError("match_frame: prediction class " + std::to_string(d.class_id) + " outside taxonomy of " +
                            std::to_string(num_classes) + " classes");
    }
    pred_by_class[d.class_id].push_back({d.x, d.y});
  }
  for (const auto& k : gts.keypoints) {
    if (k.class_id < 1 || k.class_id >= num_classes) {
      throw ValidationError("match_frame: ground-truth class " + std::to_string(k.class_id) + " outside taxonomy");
    }
    if (k.visible) gt_by_class[k.class_id].push_back({k.x, k.y});
  }
  std::vector<MatchRecord> out;
  for (int c = 1; c < num_classes; ++c) {
    const auto& ps = pred_by_class[c];
    const auto& gs = gt_by_class[c];
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (std::size_t j = 0; j < gs.size(); ++j) {
        const double d = std::hypot(ps[i].x - gs[j].x, ps[i].y - gs[j].y);
        if (d <= tau) pairs.emplace_back(d, i, j);
      }
    std::sort(pairs.begin(), pairs.end());
    std::vector<bool> pused(ps.size()), gused(gs.size());
    auto base = [&] {
      MatchRecord r;
      r.video_id = gts.video_id.empty() ? preds.video_id : gts.video_id;
      r.frame_index = gts.frame_index;
      r.class_id = c;
      return r;
    };
    for (const auto& [d, i, j] : pairs) {
      if (pused[i] || gused[j]) continue;
      pused[i] = gused[j] = true;
      MatchRecord r = base();
      r.pred = ps[i];
      r.gt = gs[j];
      r.error = d;
      r.outcome = Outcome::TP;
      out.push_back(r);
    }
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (!pused[i]) {
        MatchRecord r = base();
        r.pred = ps[i];
        r.outcome = Outcome::FP;
        out.push_back(r);
      }
    for (std::size_t j = 0; j < gs.size(); ++j)
      if (!gused[j]) {
        MatchRecord r = base();
        r.gt = gs[j];
        r.outcome = Outcome::FN;
        out.push_back(r);
      }
  }
  return out;
}

struct ClassMetrics {
  int class_id = 0;
  std::string name;
  std::int64_t tp = 0, fp = 0, fn = 0;
  std::optional<double> precision;  // percent; absent with no predictions
  std::optional<double> recall;     // percent; absent with no ground truth
  std::optional<double> accuracy;   // TP / GT count, percent
  std::optional<double> rmse;       // over TP errors; absent with no TP
};

struct MetricReport {
  double tau = 0.0;
  std::vector<ClassMetrics> classes;
  std::int64_t tp = 0, fp = 0, fn = 0;
  // Macro averages over classes where the value is defined.
  std::optional<double> mean_precision, mean_recall, mean_accuracy;
  std::optional<double> rmse_mean, rmse_std;
  // Pooled over all keypoints.
  std::optional<double> precision, recall, accuracy, pooled_rmse;
};

namespace detail {

inline std::optional<double> pct(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

inline std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double s = 0.0;
  int n = 0;
  for (const auto& x : xs)
    if (x) {
      s += *x;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / n;
}

}  // namespace detail

inline MetricReport aggregate(const std::vector<MatchRecord>& records, const ClassTaxonomy& taxonomy, double tau) {
  if (records.empty()) throw ValidationError("aggregate: no match records (empty test set?)");
  MetricReport rep;
  rep.tau = tau;
  std::map<int, std::vector<double>> errors;
  std::map<int, std::array<std::int64_t, 3>> counts;
  std::vector<double> all_errors;
  for (const auto& r : records) {
    auto& cnt = counts[r.class_id];
    cnt[static_cast<std::size_t>(r.outcome)] += 1;
    if (r.outcome == Outcome::TP) {
      errors[r.class_id].push_back(*r.error);
      all_errors.push_back(*r.error);
    }
  }
  std::vector<std::optional<double>> ps, rs, as, rmses;
  for (int c = 1; c < taxonomy.num_classes(); ++c) {
    ClassMetrics m;
    m.class_id = c;
    m.name = taxonomy.name(c);
    const auto cnt = counts[c];
    m.tp = cnt[0];
    m.fp = cnt[1];
    m.fn = cnt[2];
    m.precision = detail::pct(m.tp, m.tp + m.fp);
    m.recall = detail::pct(m.tp, m.tp + m.fn);
    m.accuracy = m.recall;
    if (!errors[c].empty()) {
      double s = 0.0;
      for (double e : errors[c]) s += e * e;
      m.rmse = std::sqrt(s / static_cast<double>(errors[c].size()));
    }
    rep.tp += m.tp;
    rep.fp += m.fp;
    rep.fn += m.fn;
    ps.push_back(m.precision);
    rs.push_back(m.recall);
    as.push_back(m.accuracy);
    rmses.push_back(m.rmse);
    rep.classes.push_back(m);
  }
  rep.mean_precision = detail::mean_of(ps);
  rep.mean_recall = detail::mean_of(rs);
  rep.mean_accuracy = detail::mean_of(as);
  rep.rmse_mean = detail::mean_of(rmses);
  if (rep.rmse_mean) {
    double s = 0.0;
    int n = 0;
    for (const auto& r : rmses)
      if (r) {
        s += (*r - *rep.rmse_mean) * (*r - *rep.rmse_mean);
        ++n;
      }
    rep.rmse_std = std::sqrt(s / n);
  }
  rep.precision = detail::pct(rep.tp, rep.tp + rep.fp);
  rep.recall = detail::pct(rep.tp, rep.tp + rep.fn);
  rep.accuracy = rep.recall;
  if (!all_errors.empty()) {
    double s = 0.0;
    for (double e : all_errors) s += e * e;
    rep.pooled_rmse = std::sqrt(s / static_cast<double>(all_errors.size()));
  }
  return rep;
}

/// Matches every annotated frame; frames without a prediction count as
/// all-FN. Predictions are keyed by (video, frame).
inline std::vector<MatchRecord> match_all(const std::vector<TrackResult>& preds,
                                          const std::vector<KeypointAnnotation>& gts, double tau, int num_classes) {
  std::map<std::pair<std::string, int>, const TrackResult*> index;
  for (const auto& p : preds) index[{p.video_id, p.frame_index}] = &p;
  std::vector<MatchRecord> out;
  for (const auto& g : gts) {
    auto it = index.find({g.video_id, g.frame_index});
    TrackResult empty;
    empty.video_id = g.video_id;
    empty.frame_index = g.frame_index;
    auto recs = match_frame(it == index.end() ? empty : *it->second, g, tau, num_classes);
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report output.

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const MetricReport& r) {
  json classes = json::array();
  for (const auto& c : r.classes) {
    classes.push_back({{"class", c.name},
                       {"tp", c.tp},
                       {"fp", c.fp},
                       {"fn", c.fn},
                       {"precision", opt_json(c.precision)},
                       {"recall", opt_json(c.recall)},
                       {"accuracy", opt_json(c.accuracy)},
                       {"rmse", opt_json(c.rmse)}});
  }
  return {{"tau_px", r.tau},
          {"tp", r.tp},
          {"fp", r.fp},
          {"fn", r.fn},
          {"precision", opt_json(r.precision)},
          {"recall", opt_json(r.recall)},
          {"accuracy", opt_json(r.accuracy)},
          {"pooled_rmse", opt_json(r.pooled_rmse)},
          {"mean_precision", opt_json(r.mean_precision)},
          {"mean_recall", opt_json(r.mean_recall)},
          {"mean_accuracy", opt_json(r.mean_accuracy)},
          {"rmse_mean", opt_json(r.rmse_mean)},
          {"rmse_std", opt_json(r.rmse_std)},
          {"classes", classes}};
}

inline std::string fmt_opt(const std::optional<double>& v, int prec = 1) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, *v);
  return buf;
}

inline std::string format_report(const MetricReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-22s %6s %6s %6s %8s %8s %8s %8s\n", "class", "TP", "FP", "FN", "prec%",
                "recall%", "acc%", "RMSE");
  os << line;
  for (const auto& c : r.classes) {
    std::snprintf(line, sizeof(line), "%-22s %6lld %6lld %6lld %8s %8s %8s %8s\n", c.name.c_str(),
                  static_cast<long long>(c.tp), static_cast<long long>(c.fp), static_cast<long long>(c.fn),
                  fmt_opt(c.precision).c_str(), fmt_opt(c.recall).c_str(), fmt_opt(c.accuracy).c_str(),
                  fmt_opt(c.rmse, 2).c_str());
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-22s %6lld %6lld %6lld %8s %8s %8s %8s\n", "pooled", static_cast<long long>(r.tp),
                static_cast<long long>(r.fp), static_cast<long long>(r.fn), fmt_opt(r.precision).c_str(),
                fmt_opt(r.recall).c_str(), fmt_opt(r.accuracy).c_str(), fmt_opt(r.pooled_rmse, 2).c_str());
  os << line;
  os << "RMSE across classes: " << fmt_opt(r.rmse_mean) << " +/- " << fmt_opt(r.rmse_std) << " px (tau = "
     << fmt_opt(r.tau, 2) << " px)\n";
  return os.str();
}

inline void write_records_csv(const std::filesystem::path& path, const std::vector<MatchRecord>& records,
                              const ClassTaxonomy& taxonomy) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "video,frame,class,outcome,gt_x,gt_y,pred_x,pred_y,error\n";
  auto f = [](const std::optional<double>& v) { return v ? fmt_opt(v, 4) : std::string(); };
  for (const auto& r : records) {
    os << r.video_id << ',' << r.frame_index << ',' << taxonomy.name(r.class_id) << ',' << to_string(r.outcome) << ','
       << f(r.gt ? std::optional(r.gt->x) : std::nullopt) << ',' << f(r.gt ? std::optional(r.gt->y) : std::nullopt)
       << ',' << f(r.pred ? std::optional(r.pred->x) : std::nullopt) << ','
       << f(r.pred ? std::optional(r.pred->y) : std::nullopt) << ',' << f(r.error) << '\n';
  }
}

}  // namespace kptrack
