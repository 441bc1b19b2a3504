#pragma once

// Command-line front end. Kept in a header so tests can drive every command
// in-process through run().

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kptrack/dataio.hpp"
#include "kptrack/error.hpp"
#include "kptrack/flowdepth.hpp"
#include "kptrack/image_io.hpp"
#include "kptrack/localize.hpp"
#include "kptrack/metrics.hpp"
#include "kptrack/models.hpp"
#include "kptrack/pipeline.hpp"
#include "kptrack/synth.hpp"

namespace kptrack::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kRuntime = 4 };

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kUsage;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const ValidationError*>(&e)) return kData;
  return kRuntime;
}

inline const char* kind_of(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const ValidationError*>(&e)) return "validation";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  return "runtime";
}

// ---------------------------------------------------------------------------
// Run configuration: a JSON file with optional "train", "mfc", "provider" and
// "paths" sections. Command-line flags override file values.

struct ProviderConfig {
  std::string kind = "files";  // files | oracle
  int flow_downsample = 0;     // 0: take it from the dataset's synth.json, else 1
};

struct RunConfig {
  TrainConfig train;
  MfcConfig mfc;
  ProviderConfig provider;
  json paths = json::object();
};

inline json to_json(const ProviderConfig& p) { return {{"kind", p.kind}, {"flow_downsample", p.flow_downsample}}; }

inline json to_json(const RunConfig& c) {
  json m = kptrack::to_json(c.mfc);
  m.erase("num_classes");
  return {{"train", kptrack::to_json(c.train)}, {"mfc", m}, {"provider", to_json(c.provider)}, {"paths", c.paths}};
}

inline json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::optional<std::string>& path) {
  RunConfig c;
  if (!path) return c;
  const json j = read_json_file(*path);
  if (!j.is_object()) throw ParseError(*path + ": config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k != "train" && k != "mfc" && k != "provider" && k != "paths") {
      throw ValidationError(*path + ": unknown config section \"" + k + "\"");
    }
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  try {
    if (j.contains("mfc")) {
      const auto& m = j.at("mfc");
      c.mfc.k = m.value("k", c.mfc.k);
      c.mfc.use_depth = m.value("use_depth", c.mfc.use_depth);
      if (m.contains("variant")) c.mfc.variant = parse_variant(m.at("variant").get<std::string>());
    }
    if (j.contains("provider")) {
      c.provider.kind = j.at("provider").value("kind", c.provider.kind);
      c.provider.flow_downsample = j.at("provider").value("flow_downsample", c.provider.flow_downsample);
    }
    if (j.contains("paths")) c.paths = j.at("paths");
  } catch (const json::exception& e) {
    throw ParseError(*path + ": " + e.what());
  }
  return c;
}

inline std::unique_ptr<FlowDepthProvider> make_provider(const ProviderConfig& p, const fs::path& data_root) {
  if (p.kind == "oracle") return std::make_unique<synth::OracleProvider>(synth::OracleProvider::from_dataset(data_root));
  if (p.kind != "files") throw UsageError("unknown provider \"" + p.kind + "\" (expected files or oracle)");
  int factor = p.flow_downsample;
  if (factor == 0) {
    factor = 1;
    const fs::path meta = data_root / "synth.json";
    if (fs::exists(meta)) factor = read_json_file(meta).value("flow_downsample", 1);
  }
  return std::make_unique<FileProvider>(data_root, factor);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

inline bool parse_on_off(const std::string& s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw UsageError("expected on/off, got \"" + s + "\"");
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

/// Default tau from the first frame of the first video of a dataset.
inline double dataset_tau(const Dataset& ds) {
  for (const auto& id : ds.video_ids) {
    const fs::path f = layout::frame(ds.root, id, 0);
    if (fs::exists(f)) {
      const Tensor t = io::read_png(f);
      return default_tau(t.dim(1), t.dim(2));
    }
  }
  throw UsageError("cannot infer frame size for the default tau; pass --tau");
}

// ---------------------------------------------------------------------------
// Shared option groups.

struct TrainFlags {
  std::optional<int> epochs, batch_size;
  std::optional<float> lr, finetune_lr, mfcnet_lr;
  std::optional<std::uint64_t> seed;
  std::optional<double> val_fraction;
  bool no_augment = false;

  void add(CLI::App* app, bool mfc) {
    app->add_option("--epochs", epochs, "Training epochs (default 20)");
    app->add_option("--batch-size", batch_size, "Minibatch size (default 4)");
    if (mfc) {
      app->add_option("--finetune-lr", finetune_lr, "SFC fine-tuning learning rate (default 1e-6; 0 freezes)");
      app->add_option("--mfcnet-lr", mfcnet_lr, "MFCNet learning rate (default 1e-4)");
    } else {
      app->add_option("--lr", lr, "Learning rate (default 3e-5)");
    }
    app->add_option("--seed", seed, "Random seed (default 0)");
    app->add_option("--val-fraction", val_fraction, "Share of videos held out for validation (default 0.1)");
    app->add_flag("--no-augment", no_augment, "Disable flip/scale/photometric augmentation");
  }

  void apply(TrainConfig& c) const {
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (lr) c.sfc_lr = *lr;
    if (finetune_lr) c.mfc_finetune_lr = *finetune_lr;
    if (mfcnet_lr) c.mfcnet_lr = *mfcnet_lr;
    if (seed) c.seed = *seed;
    if (val_fraction) c.val_fraction = *val_fraction;
    if (no_augment) c.augment = false;
    c.validate();
  }
};

struct MfcFlags {
  std::optional<int> k;
  std::optional<std::string> variant, depth, provider;
  std::optional<int> flow_downsample;

  void add(CLI::App* app, bool with_model = true) {
    if (with_model) {
      app->add_option("--K", k, "Window length K >= 2 (default 3)");
      app->add_option("--variant", variant, "MFCNet variant B (concatenate) or W (warp) (default W)");
      app->add_option("--depth", depth, "Use depth maps: on|off (default on)");
    }
    app->add_option("--provider", provider, "Flow/depth source: files|oracle (default files)");
    app->add_option("--flow-downsample", flow_downsample,
                    "Factor the stored flows were downsampled by (default: from synth.json, else 1)");
  }

  void apply(RunConfig& c) const {
    if (k) c.mfc.k = *k;
    if (variant) c.mfc.variant = parse_variant(*variant);
    if (depth) c.mfc.use_depth = parse_on_off(*depth);
    if (provider) c.provider.kind = *provider;
    if (flow_downsample) c.provider.flow_downsample = *flow_downsample;
  }
};

// ---------------------------------------------------------------------------
// Overlay rendering.

inline std::array<std::uint8_t, 3> class_color(int class_id) {
  static const std::array<std::array<std::uint8_t, 3>, 12> palette{{{230, 25, 75},
                                                                    {60, 180, 75},
                                                                    {255, 225, 25},
                                                                    {0, 130, 200},
                                                                    {245, 130, 48},
                                                                    {145, 30, 180},
                                                                    {70, 240, 240},
                                                                    {240, 50, 230},
                                                                    {210, 245, 60},
                                                                    {250, 190, 212},
                                                                    {0, 128, 128},
                                                                    {170, 110, 40}}};
  return palette[static_cast<std::size_t>((class_id - 1) % 12)];
}

inline constexpr double kMaskOpacity = 0.4;
inline constexpr int kCrossArm = 3;  // 7-px crosses

inline std::vector<std::uint8_t> to_rgb8(const Tensor& frame) {
  const std::int64_t h = frame.dim(1), w = frame.dim(2), hw = h * w;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(hw * 3));
  for (std::int64_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(frame[c * hw + i], 0.0f, 1.0f);
      rgb[static_cast<std::size_t>(i * 3 + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  return rgb;
}

inline void blend_mask(std::vector<std::uint8_t>& rgb, const SegMap& mask) {
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    if (mask.labels[i] == 0) continue;
    const auto col = class_color(mask.labels[i]);
    for (int c = 0; c < 3; ++c) {
      auto& px = rgb[i * 3 + static_cast<std::size_t>(c)];
      px = static_cast<std::uint8_t>(std::lround((1.0 - kMaskOpacity) * px + kMaskOpacity * col[static_cast<std::size_t>(c)]));
    }
  }
}

inline void draw_cross(std::vector<std::uint8_t>& rgb, std::int64_t h, std::int64_t w, double x, double y,
                       std::array<std::uint8_t, 3> col) {
  const auto cx = static_cast<std::int64_t>(std::lround(x)), cy = static_cast<std::int64_t>(std::lround(y));
  auto put = [&](std::int64_t px, std::int64_t py) {
    if (px < 0 || py < 0 || px >= w || py >= h) return;
    for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>((py * w + px) * 3 + c)] = col[static_cast<std::size_t>(c)];
  };
  for (int d = -kCrossArm; d <= kCrossArm; ++d) {
    put(cx + d, cy);
    put(cx, cy + d);
  }
}

/// Frame with a 40% class-colour mask overlay, ground-truth crosses in green
/// and predicted crosses in white.
inline std::vector<std::uint8_t> render_overlay(const Tensor& frame, const SegMap& mask, const KeypointAnnotation* gt,
                                                const TrackResult* pred) {
  const std::int64_t h = frame.dim(1), w = frame.dim(2);
  auto rgb = to_rgb8(frame);
  blend_mask(rgb, mask);
  if (gt)
    for (const auto& k : gt->keypoints)
      if (k.visible) draw_cross(rgb, h, w, k.x, k.y, {0, 255, 0});
  if (pred)
    for (const auto& d : pred->detections) draw_cross(rgb, h, w, d.x, d.y, {255, 255, 255});
  return rgb;
}

// ---------------------------------------------------------------------------
// Commands.

struct Context {
  std::ostream& out;
  std::ostream& err;
};

inline void echo_config(const fs::path& run_dir, const std::string& command, const RunConfig& cfg) {
  json j = to_json(cfg);
  j["command"] = command;
  write_text(run_dir / "run_config.json", j.dump(2) + "\n");
}

inline std::vector<std::string> select_videos(const Dataset& ds, const std::optional<std::string>& list) {
  if (!list) return ds.video_ids;
  auto ids = split_list(*list);
  for (const auto& id : ids)
    if (std::find(ds.video_ids.begin(), ds.video_ids.end(), id) == ds.video_ids.end()) {
      throw ValidationError("video \"" + id + "\" is not in dataset " + ds.root.string());
    }
  return ids;
}

/// One ablation cell per (K, variant, depth) combination.
struct AblationRow {
  MfcConfig mfc;
  MetricReport report;
};

inline std::string format_ablation(const std::vector<AblationRow>& rows, const std::optional<MetricReport>& baseline) {
  std::ostringstream os;
  char line[200];
  std::snprintf(line, sizeof(line), "%-32s %8s %8s %8s %16s %10s\n", "model", "acc%", "prec%", "recall%",
                "RMSE mean+/-std", "pooled");
  os << line;
  auto row = [&](const std::string& name, const MetricReport& r) {
    const std::string spread = fmt_opt(r.rmse_mean, 2) + " +/- " + fmt_opt(r.rmse_std, 2);
    std::snprintf(line, sizeof(line), "%-32s %8s %8s %8s %16s %10s\n", name.c_str(), fmt_opt(r.accuracy).c_str(),
                  fmt_opt(r.precision).c_str(), fmt_opt(r.recall).c_str(), spread.c_str(),
                  fmt_opt(r.pooled_rmse, 2).c_str());
    os << line;
  };
  if (baseline) row("SFC (baseline)", *baseline);
  for (const auto& r : rows) row(r.mfc.label(), r.report);
  return os.str();
}

inline int cmd_synth_gen(Context& ctx, const fs::path& out_dir, const synth::SceneConfig& scene, int clips,
                         std::uint64_t seed, const synth::GenOptions& opt) {
  const auto s = synth::gen_dataset(scene, clips, seed, out_dir, opt);
  ctx.out << "wrote " << s.clips << " clips, " << s.frames << " frames (" << s.annotated_frames
          << " annotated) to " << out_dir.string() << "\n";
  return kOk;
}

inline int cmd_prepare(Context& ctx, const fs::path& root, std::optional<double> radius, bool write_masks,
                       const std::optional<std::string>& export_gt) {
  const Dataset ds = open_dataset(root);
  double r = 5.0;
  if (radius) {
    r = *radius;
  } else if (fs::exists(root / "synth.json")) {
    r = read_json_file(root / "synth.json").at("config").value("mask_radius", 5.0);
  }
  if (!(r > 0.0)) throw UsageError("--radius must be > 0");
  const MaskSpec spec{r, ds.taxonomy};
  int frames = 0, annotated = 0;
  std::vector<TrackResult> gt_tracks;
  for (const auto& id : ds.video_ids) {
    const VideoData v = load_video(ds, id);
    frames += static_cast<int>(v.frames.size());
    for (const auto& a : v.annotations) {
      const SegMap m = rasterize_masks(a, spec, v.height(), v.width());
      if (write_masks) io::write_label_png(layout::mask(root, id, a.frame_index), m.labels, m.h, m.w);
      ++annotated;
      TrackResult t{id, a.frame_index, {}};
      for (const auto& k : a.keypoints)
        if (k.visible) t.detections.push_back({k.class_id, k.x, k.y, 1.0});
      gt_tracks.push_back(std::move(t));
    }
  }
  if (export_gt) write_track_results(*export_gt, gt_tracks, ds.taxonomy);
  ctx.out << "validated " << ds.video_ids.size() << " videos, " << frames << " frames, " << annotated
          << " annotated frames (mask radius " << r << " px)\n";
  return kOk;
}

inline int cmd_train_sfc(Context& ctx, const fs::path& data, const fs::path& run, const RunConfig& cfg,
                         const std::optional<std::string>& init) {
  const Dataset ds = open_dataset(data);
  echo_config(run, "train-sfc", cfg);
  std::optional<MiniSeg> start;
  if (init) start = load_checkpoint(*init).sfc;
  const TrainResult r = train_sfc(ds, cfg.train, run, &ctx.out, start);
  ctx.out << "best epoch " << r.best_epoch << ": " << (run / "best.mkpt").string() << "\n";
  return kOk;
}

inline int cmd_train_mfc(Context& ctx, const fs::path& data, const fs::path& sfc_path, const fs::path& run,
                         const RunConfig& cfg) {
  const Dataset ds = open_dataset(data);
  const Checkpoint sfc = load_checkpoint(sfc_path);
  const auto provider = make_provider(cfg.provider, data);
  echo_config(run, "train-mfc", cfg);
  const TrainResult r = train_mfc(ds, sfc, cfg.train, cfg.mfc, *provider, run, &ctx.out);
  ctx.out << "best epoch " << r.best_epoch << ": " << (run / "best.mkpt").string() << "\n";
  return kOk;
}

inline int cmd_infer(Context& ctx, const fs::path& ckpt_path, const fs::path& data, const fs::path& out,
                     const std::optional<std::string>& videos, const ProviderConfig& pcfg, std::int64_t min_area) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset ds = open_dataset(data);
  std::unique_ptr<FlowDepthProvider> provider;
  if (ckpt.mfc) provider = make_provider(pcfg, data);
  const InferReport r = infer_dataset(ckpt, ds, select_videos(ds, videos), provider.get(), min_area);
  write_track_results(out, r.results, ckpt.taxonomy);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld frames in %.2f s: %.1f frames/s (hardware-dependent)\n",
                static_cast<long long>(r.frames), r.seconds, r.fps());
  ctx.out << "wrote " << r.results.size() << " results to " << out.string() << "\n" << buf;
  return kOk;
}

/// Ground truth from a dataset root or an annotations/ directory.
inline std::pair<std::vector<KeypointAnnotation>, ClassTaxonomy> load_ground_truth(
    const fs::path& gt, const std::optional<std::string>& taxonomy_path, std::optional<Dataset>& ds) {
  fs::path ann_dir = gt.lexically_normal(), root = ann_dir;
  if (!ann_dir.filename().empty() && fs::is_directory(ann_dir / "annotations")) {
    ann_dir /= "annotations";
  } else {
    if (ann_dir.filename().empty()) ann_dir = ann_dir.parent_path();
    root = ann_dir.has_parent_path() ? ann_dir.parent_path() : fs::path(".");
  }
  if (!fs::is_directory(ann_dir)) throw IoError("ground-truth directory not found: " + gt.string());
  ClassTaxonomy tax;
  if (taxonomy_path) {
    tax = load_taxonomy(*taxonomy_path);
  } else if (fs::exists(layout::taxonomy(root))) {
    tax = load_taxonomy(layout::taxonomy(root));
    ds = open_dataset(root);
  } else {
    throw UsageError("no taxonomy.json next to " + ann_dir.string() + "; pass --taxonomy");
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(ann_dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<KeypointAnnotation> out;
  for (const auto& f : files) {
    auto anns = load_annotations(f, tax);
    for (auto& a : anns)
      if (a.video_id.empty()) a.video_id = f.stem().string();
    out.insert(out.end(), anns.begin(), anns.end());
  }
  if (out.empty()) throw ValidationError("no annotations under " + ann_dir.string());
  return {out, tax};
}

inline int cmd_eval(Context& ctx, const fs::path& pred, const fs::path& gt, const std::optional<std::string>& taxonomy,
                    std::optional<double> tau, const std::optional<std::string>& out_json,
                    const std::optional<std::string>& csv) {
  std::optional<Dataset> ds;
  auto [anns, tax] = load_ground_truth(gt, taxonomy, ds);
  if (!tau) {
    if (!ds) throw UsageError("cannot infer frame size for the default tau; pass --tau");
    tau = dataset_tau(*ds);
  }
  const auto preds = read_track_results(pred, tax);
  const Evaluation e = evaluate(preds, anns, tax, *tau);
  ctx.out << format_report(e.report);
  if (out_json) write_text(*out_json, kptrack::to_json(e.report).dump(2) + "\n");
  if (csv) write_records_csv(*csv, e.records, tax);
  return kOk;
}

inline int cmd_ablate(Context& ctx, const fs::path& data, const std::optional<std::string>& test,
                      const std::optional<std::string>& sfc_path, const fs::path& run, RunConfig cfg,
                      const std::vector<int>& ks, const std::vector<Variant>& variants, const std::vector<bool>& depths,
                      std::optional<double> tau) {
  const Dataset ds = open_dataset(data);
  const Dataset ts = open_dataset(test ? fs::path(*test) : data);
  const double t = tau ? *tau : dataset_tau(ts);
  echo_config(run, "ablate", cfg);
  Checkpoint sfc;
  if (sfc_path) {
    sfc = load_checkpoint(*sfc_path);
  } else {
    ctx.out << "training SFC baseline\n";
    sfc = train_sfc(ds, cfg.train, run / "sfc", &ctx.out).best;
  }
  const auto gts = dataset_annotations(ts, ts.video_ids);
  const auto base = evaluate(infer_dataset(sfc, ts, ts.video_ids).results, gts, ts.taxonomy, t).report;
  const auto train_provider = make_provider(cfg.provider, data);
  const auto test_provider = make_provider(cfg.provider, ts.root);
  std::vector<AblationRow> rows;
  json cells = json::array();
  for (int k : ks)
    for (Variant v : variants)
      for (bool d : depths) {
        MfcConfig m = cfg.mfc;
        m.k = k;
        m.variant = v;
        m.use_depth = d;
        ctx.out << "== " << m.label() << "\n";
        const std::string cell = "K" + std::to_string(k) + "_" + to_string(v) + (d ? "_depth" : "_nodepth");
        const TrainResult r = train_mfc(ds, sfc, cfg.train, m, *train_provider, run / cell, &ctx.out);
        const auto rep = evaluate(infer_dataset(r.best, ts, ts.video_ids, test_provider.get()).results, gts,
                                  ts.taxonomy, t).report;
        rows.push_back({r.best.mfc->config(), rep});
        json c = kptrack::to_json(rep);
        c["model"] = m.label();
        c["k"] = k;
        c["variant"] = to_string(v);
        c["use_depth"] = d;
        cells.push_back(c);
      }
  const std::string table = format_ablation(rows, base);
  write_text(run / "ablation.txt", table);
  json summary{{"tau_px", t}, {"baseline", kptrack::to_json(base)}, {"cells", cells}};
  write_text(run / "ablation.json", summary.dump(2) + "\n");
  std::ostringstream csv;
  csv << "model,k,variant,use_depth,accuracy,precision,recall,rmse_mean,rmse_std,pooled_rmse\n";
  for (const auto& r : rows) {
    csv << r.mfc.label() << ',' << r.mfc.k << ',' << to_string(r.mfc.variant) << ',' << (r.mfc.use_depth ? 1 : 0)
        << ',' << fmt_opt(r.report.accuracy, 3) << ',' << fmt_opt(r.report.precision, 3) << ','
        << fmt_opt(r.report.recall, 3) << ',' << fmt_opt(r.report.rmse_mean, 4) << ','
        << fmt_opt(r.report.rmse_std, 4) << ',' << fmt_opt(r.report.pooled_rmse, 4) << '\n';
  }
  write_text(run / "ablation.csv", csv.str());
  ctx.out << table;
  return kOk;
}

inline int cmd_render(Context& ctx, const fs::path& data, const std::string& video, const std::optional<std::string>& pred,
                      const std::optional<std::string>& ckpt_path, const fs::path& out_dir,
                      const std::optional<std::string>& frames, const ProviderConfig& pcfg) {
  const Dataset ds = open_dataset(data);
  const VideoData v = load_video(ds, video);
  std::vector<TrackResult> preds;
  if (pred) {
    for (auto& r : read_track_results(*pred, ds.taxonomy))
      if (r.video_id.empty() || r.video_id == video) preds.push_back(std::move(r));
  }
  std::vector<Tensor> probs;
  if (ckpt_path) {
    const Checkpoint ckpt = load_checkpoint(*ckpt_path);
    std::unique_ptr<FlowDepthProvider> provider;
    if (ckpt.mfc) provider = make_provider(pcfg, data);
    probs = predict_video(ckpt, v, provider.get());
  }
  std::vector<int> which;
  if (frames) {
    for (const auto& s : split_list(*frames)) which.push_back(std::stoi(s));
  } else {
    for (int i = 0; i < static_cast<int>(v.frames.size()); ++i) which.push_back(i);
  }
  double radius = 5.0;
  if (fs::exists(data / "synth.json")) radius = read_json_file(data / "synth.json").at("config").value("mask_radius", 5.0);
  int written = 0;
  for (int t : which) {
    if (t < 0 || t >= static_cast<int>(v.frames.size())) throw UsageError("frame " + std::to_string(t) + " out of range");
    const KeypointAnnotation* gt = nullptr;
    for (const auto& a : v.annotations)
      if (a.frame_index == t) gt = &a;
    const TrackResult* p = nullptr;
    for (const auto& r : preds)
      if (r.frame_index == t) p = &r;
    SegMap mask(v.height(), v.width());
    if (!probs.empty()) {
      mask = argmax_labels(probs[static_cast<std::size_t>(t)]);
    } else if (gt) {
      mask = rasterize_masks(*gt, MaskSpec{radius, ds.taxonomy}, v.height(), v.width());
    }
    const auto rgb = render_overlay(v.frames[static_cast<std::size_t>(t)], mask, gt, p);
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%06d.png", video.c_str(), t);
    io::write_png_rgb8(out_dir / name, rgb, v.height(), v.width());
    ++written;
  }
  ctx.out << "wrote " << written << " overlays to " << out_dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point.

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Surgical keypoint tracking: synthetic data, training, inference and evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");
  Context ctx{out, err};
  std::function<int()> action;

  // synth-gen
  auto* gen = app.add_subcommand("synth-gen", "Generate a synthetic dataset with exact flow and depth");
  std::string gen_out;
  int gen_clips = 10, gen_frames = 20;
  std::uint64_t gen_seed = 0;
  std::optional<std::string> gen_config, gen_taxonomy;
  std::optional<std::int64_t> gen_h, gen_w;
  std::optional<int> gen_tools;
  std::optional<double> gen_motion, gen_drift, gen_radius;
  bool gen_hard = false;
  synth::GenOptions gen_opt;
  gen->add_option("-o,--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--clips", gen_clips, "Number of clips")->capture_default_str();
  gen->add_option("--frames", gen_frames, "Frames per clip")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Dataset seed")->capture_default_str();
  gen->add_option("--config", gen_config, "Scene config JSON (flags override it)");
  gen->add_option("--height", gen_h, "Frame height (default 128)");
  gen->add_option("--width", gen_w, "Frame width (default 160)");
  gen->add_option("--tools", gen_tools, "Tools per clip, 1 or 2 (default 2)");
  gen->add_option("--taxonomy", gen_taxonomy, "endovis or jigsaws (default endovis)");
  gen->add_option("--motion", gen_motion, "Tool speed in px/frame (default 1)");
  gen->add_option("--drift", gen_drift, "Background drift in hard mode, px/frame (default 0.5)");
  gen->add_option("--radius", gen_radius, "Keypoint mask radius recorded with the data (default 5)");
  gen->add_flag("--hard", gen_hard, "Enable motion blur and background drift");
  gen->add_option("--max-flow-span", gen_opt.max_flow_span, "Longest stored flow span, in frames")->capture_default_str();
  gen->add_option("--flow-downsample", gen_opt.flow_downsample, "Store flows at 1/N resolution")->capture_default_str();
  gen->callback([&] {
    action = [&] {
      synth::SceneConfig sc;
      if (gen_config) {
        const json j = read_json_file(*gen_config);
        sc = synth::scene_config_from_json(j.contains("scene") ? j.at("scene") : j);
      }
      sc.frames_per_clip = gen_frames;
      if (gen_h) sc.height = *gen_h;
      if (gen_w) sc.width = *gen_w;
      if (gen_tools) sc.num_tools = *gen_tools;
      if (gen_taxonomy) sc.taxonomy = *gen_taxonomy;
      if (gen_motion) sc.motion_amplitude = *gen_motion;
      if (gen_drift) sc.drift = *gen_drift;
      if (gen_radius) sc.mask_radius = *gen_radius;
      if (gen_hard) sc.hard = true;
      if (gen_clips < 1) throw UsageError("--clips must be >= 1");
      return cmd_synth_gen(ctx, gen_out, sc, gen_clips, gen_seed, gen_opt);
    };
  });

  // prepare
  auto* prep = app.add_subcommand("prepare", "Validate a dataset and rasterize keypoint target masks");
  std::string prep_root;
  std::optional<double> prep_radius;
  bool prep_no_masks = false;
  std::optional<std::string> prep_export;
  prep->add_option("data", prep_root, "Dataset directory")->required();
  prep->add_option("--radius", prep_radius, "Mask radius in px (default: from synth.json, else 5)");
  prep->add_flag("--no-masks", prep_no_masks, "Validate only; do not write mask PNGs");
  prep->add_option("--export-gt", prep_export, "Also write the annotations as a prediction JSONL file");
  prep->callback([&] { action = [&] { return cmd_prepare(ctx, prep_root, prep_radius, !prep_no_masks, prep_export); }; });

  // train-sfc
  auto* tsfc = app.add_subcommand("train-sfc", "Train the single-frame segmentation model");
  std::string tsfc_data, tsfc_run;
  std::optional<std::string> tsfc_config, tsfc_init;
  TrainFlags tsfc_flags;
  tsfc->add_option("--data", tsfc_data, "Training dataset directory")->required();
  tsfc->add_option("--run", tsfc_run, "Run directory for checkpoints and logs")->required();
  tsfc->add_option("--config", tsfc_config, "Run config JSON (flags override it)");
  tsfc->add_option("--init", tsfc_init, "Start from the SFC weights of this checkpoint");
  tsfc_flags.add(tsfc, false);
  tsfc->callback([&] {
    action = [&] {
      RunConfig cfg = load_run_config(tsfc_config);
      tsfc_flags.apply(cfg.train);
      cfg.paths["data"] = tsfc_data;
      cfg.paths["run"] = tsfc_run;
      return cmd_train_sfc(ctx, tsfc_data, tsfc_run, cfg, tsfc_init);
    };
  });

  // train-mfc
  auto* tmfc = app.add_subcommand("train-mfc", "Fine-tune an SFC checkpoint jointly with MFCNet");
  std::string tmfc_data, tmfc_run, tmfc_sfc;
  std::optional<std::string> tmfc_config;
  TrainFlags tmfc_flags;
  MfcFlags tmfc_mfc;
  tmfc->add_option("--data", tmfc_data, "Training dataset directory")->required();
  tmfc->add_option("--sfc", tmfc_sfc, "Pretrained SFC checkpoint")->required();
  tmfc->add_option("--run", tmfc_run, "Run directory for checkpoints and logs")->required();
  tmfc->add_option("--config", tmfc_config, "Run config JSON (flags override it)");
  tmfc_flags.add(tmfc, true);
  tmfc_mfc.add(tmfc);
  tmfc->callback([&] {
    action = [&] {
      RunConfig cfg = load_run_config(tmfc_config);
      tmfc_flags.apply(cfg.train);
      tmfc_mfc.apply(cfg);
      cfg.paths["data"] = tmfc_data;
      cfg.paths["sfc"] = tmfc_sfc;
      cfg.paths["run"] = tmfc_run;
      return cmd_train_mfc(ctx, tmfc_data, tmfc_sfc, tmfc_run, cfg);
    };
  });

  // infer
  auto* inf = app.add_subcommand("infer", "Predict keypoints for every frame and write JSON lines");
  std::string inf_ckpt, inf_data, inf_out;
  std::optional<std::string> inf_videos;
  std::int64_t inf_min_area = kDefaultMinArea;
  MfcFlags inf_mfc;
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint (SFC or MFC)")->required();
  inf->add_option("--data", inf_data, "Dataset directory")->required();
  inf->add_option("-o,--out", inf_out, "Output JSONL path")->required();
  inf->add_option("--videos", inf_videos, "Comma-separated video ids (default: all)");
  inf->add_option("--min-area", inf_min_area, "Smallest blob kept, in px")->capture_default_str();
  inf_mfc.add(inf, false);
  inf->callback([&] {
    action = [&] {
      RunConfig cfg;
      inf_mfc.apply(cfg);
      return cmd_infer(ctx, inf_ckpt, inf_data, inf_out, inf_videos, cfg.provider, inf_min_area);
    };
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Score predictions against ground-truth annotations");
  std::string ev_pred, ev_gt;
  std::optional<std::string> ev_tax, ev_out, ev_csv;
  std::optional<double> ev_tau;
  ev->add_option("--pred", ev_pred, "Prediction JSONL")->required();
  ev->add_option("--gt", ev_gt, "Dataset directory or its annotations/ directory")->required();
  ev->add_option("--taxonomy", ev_tax, "taxonomy.json (default: next to the annotations)");
  ev->add_option("--tau", ev_tau, "Match threshold in px (default 20 px scaled by min(H,W)/576)");
  ev->add_option("-o,--out", ev_out, "Write the report as JSON");
  ev->add_option("--csv", ev_csv, "Write per-keypoint match records as CSV");
  ev->callback([&] { action = [&] { return cmd_eval(ctx, ev_pred, ev_gt, ev_tax, ev_tau, ev_out, ev_csv); }; });

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train and score MFC models over K x variant x depth");
  std::string abl_data, abl_run, abl_k = "2,3,4", abl_variants = "B,W", abl_depth = "on,off";
  std::optional<std::string> abl_test, abl_sfc, abl_config;
  std::optional<double> abl_tau;
  TrainFlags abl_flags;
  MfcFlags abl_mfc;
  abl->add_option("--data", abl_data, "Training dataset directory")->required();
  abl->add_option("--test", abl_test, "Evaluation dataset (default: the training dataset)");
  abl->add_option("--sfc", abl_sfc, "Pretrained SFC checkpoint (default: train one first)");
  abl->add_option("--run", abl_run, "Run directory")->required();
  abl->add_option("--config", abl_config, "Run config JSON (flags override it)");
  abl->add_option("--K", abl_k, "Window lengths")->capture_default_str();
  abl->add_option("--variants", abl_variants, "MFCNet variants")->capture_default_str();
  abl->add_option("--depth", abl_depth, "Depth settings")->capture_default_str();
  abl->add_option("--tau", abl_tau, "Match threshold in px");
  abl_flags.add(abl, true);
  abl->add_option("--lr", abl_flags.lr, "SFC learning rate when training the baseline (default 3e-5)");
  abl_mfc.add(abl, false);
  abl->callback([&] {
    action = [&] {
      RunConfig cfg = load_run_config(abl_config);
      if (!abl_flags.epochs && !(abl_config && read_json_file(*abl_config).value("train", json::object()).contains("epochs"))) {
        cfg.train.epochs = 5;
      }
      abl_flags.apply(cfg.train);
      abl_mfc.apply(cfg);
      std::vector<int> ks;
      for (const auto& s : split_list(abl_k)) ks.push_back(std::stoi(s));
      std::vector<Variant> vs;
      for (const auto& s : split_list(abl_variants)) vs.push_back(parse_variant(s));
      std::vector<bool> ds;
      for (const auto& s : split_list(abl_depth)) ds.push_back(parse_on_off(s));
      if (ks.empty() || vs.empty() || ds.empty()) throw UsageError("--K, --variants and --depth must be non-empty");
      cfg.paths["data"] = abl_data;
      cfg.paths["run"] = abl_run;
      return cmd_ablate(ctx, abl_data, abl_test, abl_sfc, abl_run, cfg, ks, vs, ds, abl_tau);
    };
  });

  // render
  auto* ren = app.add_subcommand("render", "Write PNG overlays with keypoint crosses and class masks");
  std::string ren_data, ren_video, ren_out;
  std::optional<std::string> ren_pred, ren_ckpt, ren_frames;
  MfcFlags ren_mfc;
  ren->add_option("--data", ren_data, "Dataset directory")->required();
  ren->add_option("--video", ren_video, "Video id")->required();
  ren->add_option("--pred", ren_pred, "Prediction JSONL (white crosses)");
  ren->add_option("--ckpt", ren_ckpt, "Checkpoint whose predicted masks are overlaid (default: ground-truth masks)");
  ren->add_option("--frames", ren_frames, "Comma-separated frame indices (default: all)");
  ren->add_option("-o,--out", ren_out, "Output directory")->required();
  ren_mfc.add(ren, false);
  ren->callback([&] {
    action = [&] {
      RunConfig cfg;
      ren_mfc.apply(cfg);
      return cmd_render(ctx, ren_data, ren_video, ren_pred, ren_ckpt, ren_out, ren_frames, cfg.provider);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  std::string command;
  for (const auto* sub : app.get_subcommands()) command = sub->get_name();
  try {
    return action();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n"
        << "  command: " << command << "\n"
        << "  kind: " << kind_of(e) << "\n";
    return exit_code_for(e);
  }
}

}  // namespace kptrack::cli
