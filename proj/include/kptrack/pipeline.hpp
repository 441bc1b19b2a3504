#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kptrack/autodiff.hpp"
#include "kptrack/dataio.hpp"
#include "kptrack/error.hpp"
#include "kptrack/flowdepth.hpp"
#include "kptrack/localize.hpp"
#include "kptrack/metrics.hpp"
#include "kptrack/models.hpp"
#include "kptrack/ops.hpp"
#include "kptrack/optim.hpp"

namespace kptrack {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 4;
  float sfc_lr = 3e-5f;
  float mfc_finetune_lr = 1e-6f;  // 0 freezes the SFC weights during MFC training
  float mfcnet_lr = 1e-4f;
  float decay_gamma = 0.1f;
  int decay_epoch = 10;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augmentation;
  double val_fraction = 0.1;
  double mask_radius = 5.0;
  double background_weight = 0.01;
  bool mfc_passthrough_init = true;
  bool keep_epoch_checkpoints = true;

  void validate() const {
    if (epochs < 1) throw UsageError("epochs must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 1) throw UsageError("batch_size must be >= 1, got " + std::to_string(batch_size));
    if (!(sfc_lr > 0.0f)) throw UsageError("sfc_lr must be > 0");
    if (!(mfcnet_lr > 0.0f)) throw UsageError("mfcnet_lr must be > 0");
    if (!(mfc_finetune_lr >= 0.0f)) throw UsageError("mfc_finetune_lr must be >= 0");
    if (!(decay_gamma > 0.0f && decay_gamma <= 1.0f)) throw UsageError("decay_gamma must be in (0, 1]");
    if (decay_epoch < 0) throw UsageError("decay_epoch must be >= 0");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw UsageError("val_fraction must be in [0, 1)");
    if (!(mask_radius > 0.0)) throw UsageError("mask_radius must be > 0");
  }

  LrSchedule schedule(float base) const { return {base, decay_gamma, decay_epoch}; }
};

inline json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"sfc_lr", c.sfc_lr},
          {"mfc_finetune_lr", c.mfc_finetune_lr},
          {"mfcnet_lr", c.mfcnet_lr},
          {"decay_gamma", c.decay_gamma},
          {"decay_epoch", c.decay_epoch},
          {"seed", c.seed},
          {"augment", c.augment},
          {"augmentation",
           {{"flip_prob", c.augmentation.flip_prob},
            {"min_scale", c.augmentation.min_scale},
            {"max_scale", c.augmentation.max_scale},
            {"photometric", c.augmentation.photometric}}},
          {"val_fraction", c.val_fraction},
          {"mask_radius", c.mask_radius},
          {"background_weight", c.background_weight},
          {"mfc_passthrough_init", c.mfc_passthrough_init},
          {"keep_epoch_checkpoints", c.keep_epoch_checkpoints}};
}

/// Keys present in `j` override `base`; unknown keys are rejected.
inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
  static const std::vector<std::string> known{
      "epochs",       "batch_size",        "sfc_lr",      "mfc_finetune_lr",  "mfcnet_lr",
      "decay_gamma",  "decay_epoch",       "seed",        "augment",          "augmentation",
      "val_fraction", "mask_radius",       "background_weight", "mfc_passthrough_init", "keep_epoch_checkpoints"};
  if (!j.is_object()) throw ParseError("train config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ValidationError("unknown train config key \"" + k + "\"");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("epochs", base.epochs);
    get("batch_size", base.batch_size);
    get("sfc_lr", base.sfc_lr);
    get("mfc_finetune_lr", base.mfc_finetune_lr);
    get("mfcnet_lr", base.mfcnet_lr);
    get("decay_gamma", base.decay_gamma);
    get("decay_epoch", base.decay_epoch);
    get("seed", base.seed);
    get("augment", base.augment);
    get("val_fraction", base.val_fraction);
    get("mask_radius", base.mask_radius);
    get("background_weight", base.background_weight);
    get("mfc_passthrough_init", base.mfc_passthrough_init);
    get("keep_epoch_checkpoints", base.keep_epoch_checkpoints);
    if (j.contains("augmentation")) {
      const auto& a = j.at("augmentation");
      base.augmentation.flip_prob = a.value("flip_prob", base.augmentation.flip_prob);
      base.augmentation.min_scale = a.value("min_scale", base.augmentation.min_scale);
      base.augmentation.max_scale = a.value("max_scale", base.augmentation.max_scale);
      base.augmentation.photometric = a.value("photometric", base.augmentation.photometric);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  base.validate();
  return base;
}

struct EpochLog {
  int epoch = 0;
  float lr_sfc = 0.0f;
  std::optional<float> lr_mfcnet;
  double nll = 0.0;
  double jaccard = 0.0;
  double total = 0.0;
  std::optional<double> val_total;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  int best_epoch = 0;
  std::vector<EpochLog> history;
};

/// Splits video ids into train and validation sets (seeded shuffle).
/// The validation share is rounded and always leaves one training video.
struct Split {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

inline Split split_videos(std::vector<std::string> ids, double val_fraction, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
  std::shuffle(ids.begin(), ids.end(), rng);
  auto n_val = static_cast<std::size_t>(std::lround(static_cast<double>(ids.size()) * val_fraction));
  if (!ids.empty()) n_val = std::min(n_val, ids.size() - 1);
  Split s;
  s.val.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

// ---------------------------------------------------------------------------
// Forward helpers.

/// SFC probabilities for a frame of any size: edge-pad to a multiple of 8,
/// run the network, crop back.
inline Tensor predict_sfc(const MiniSeg& net, const Tensor& frame) {
  const std::int64_t h = frame.dim(1), w = frame.dim(2);
  if (h % 8 == 0 && w % 8 == 0) return net.forward(frame);
  return ops::softmax_channels(ops::crop(net.logits(ops::pad_replicate_to_multiple(frame, 8)), h, w));
}

/// Fusion output for a window, given the SFC probabilities of its frames.
inline Tensor predict_mfc(const MfcNet& net, const std::vector<Tensor>& probs, const ClipWindow& window) {
  if (window.flows.size() + 1 != probs.size()) {
    throw ShapeError("window for frame " + std::to_string(window.t) + " of " + window.video_id + " has " +
                     std::to_string(window.flows.size()) + " flows, expected K-1 = " + std::to_string(probs.size() - 1));
  }
  return net.forward(assemble_mfc_input(probs, window.flows, window.depths, net.config()));
}

inline Tensor one_hot(const SegMap& labels, int num_classes) {
  Tensor t = Tensor::zeros({num_classes, labels.h, labels.w});
  const std::int64_t hw = labels.h * labels.w;
  for (std::int64_t i = 0; i < hw; ++i) {
    const int c = labels.labels[static_cast<std::size_t>(i)];
    if (c >= num_classes) throw ValidationError("one_hot: label " + std::to_string(c) + " >= class count");
    t[c * hw + i] = 1.0f;
  }
  return t;
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL) * 0xBF58476D1CE4E5B9ULL ^
                    (c + 0x85EBCA77C2B2AE63ULL) * 0x94D049BB133111EBULL;
  x ^= x >> 31;
  x *= 0xD6E8FEB86659FD93ULL;
  x ^= x >> 29;
  return x;
}

struct ParamGroup {
  std::string name;
  std::vector<Tensor> params;
  AdamState state;
  LrSchedule schedule;
};

/// One Adam step per group at its scheduled rate; zero-rate groups are left
/// untouched.
inline void step_groups(std::vector<ParamGroup>& groups, int epoch) {
  for (auto& g : groups) {
    const float lr = g.schedule.at(epoch);
    if (lr > 0.0f) adam_step(g.params, g.state, lr);
  }
}

struct RunFiles {
  std::filesystem::path dir;  // empty: keep everything in memory

  void begin(const json& config) const {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "config.json") << config.dump(2) << "\n";
    std::ofstream(dir / "train_log.csv") << "epoch,lr_sfc,lr_mfcnet,nll,jaccard,total,val_total,wall_seconds\n";
  }

  void log(const EpochLog& e) const {
    if (dir.empty()) return;
    std::ofstream os(dir / "train_log.csv", std::ios::app);
    auto num = [](double v) {
      char b[32];
      std::snprintf(b, sizeof(b), "%.9g", v);
      return std::string(b);
    };
    os << e.epoch + 1 << ',' << num(e.lr_sfc) << ',' << (e.lr_mfcnet ? num(*e.lr_mfcnet) : "") << ',' << num(e.nll)
       << ',' << num(e.jaccard) << ',' << num(e.total) << ',' << (e.val_total ? num(*e.val_total) : "") << ','
       << num(e.wall_seconds) << '\n';
  }
};

/// Shared epoch loop. `sample_loss(index, epoch, train)` builds the loss for
/// one sample on the active tape (train) or without one (validation).
inline TrainResult run_training(const TrainConfig& cfg, std::size_t n_train, std::size_t n_val,
                                std::vector<ParamGroup>& groups,
                                const std::function<LossTerms(std::size_t, int, bool)>& sample_loss,
                                const std::function<Checkpoint()>& snapshot, const RunFiles& files,
                                std::ostream* progress) {
  if (n_train == 0) throw ValidationError("no training samples");
  TrainResult result;
  std::optional<double> best_score;
  std::vector<std::size_t> order(n_train);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 1));
    std::shuffle(order.begin(), order.end(), rng);
    double sum_h = 0.0, sum_j = 0.0, sum_t = 0.0;
    const auto bsz = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0, batch = 0; start < n_train; start += bsz, ++batch) {
      const std::size_t end = std::min(n_train, start + bsz);
      for (auto& g : groups)
        for (auto& p : g.params) p.zero_grad();
      for (std::size_t s = start; s < end; ++s) {
        Tape tape;
        TapeScope scope(tape);
        LossTerms terms = sample_loss(order[s], epoch, true);
        const double h = terms.nll.item(), j = terms.jaccard.item(), t = terms.total.item();
        for (auto [name, v] : {std::pair{"H", h}, std::pair{"J", j}, std::pair{"total", t}}) {
          if (!std::isfinite(v)) {
            throw NumericError("non-finite loss: epoch " + std::to_string(epoch + 1) + ", batch " +
                               std::to_string(batch + 1) + ", term " + name + " = " + std::to_string(v));
          }
        }
        sum_h += h;
        sum_j += j;
        sum_t += t;
        tape.backward(ops::scale(terms.total, 1.0f / static_cast<float>(end - start)));
      }
      step_groups(groups, epoch);
    }
    for (auto& g : groups)
      for (auto& p : g.params) p.zero_grad();

    EpochLog log;
    log.epoch = epoch;
    log.lr_sfc = groups.front().schedule.at(epoch);
    if (groups.size() > 1) log.lr_mfcnet = groups[1].schedule.at(epoch);
    log.nll = sum_h / static_cast<double>(n_train);
    log.jaccard = sum_j / static_cast<double>(n_train);
    log.total = sum_t / static_cast<double>(n_train);
    if (n_val > 0) {
      NoGradScope ng;
      double v = 0.0;
      for (std::size_t i = 0; i < n_val; ++i) v += sample_loss(i, epoch, false).total.item();
      log.val_total = v / static_cast<double>(n_val);
    }
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(log);
    files.log(log);

    const double score = log.val_total.value_or(log.total);
    result.last = snapshot();
    result.last.meta["epoch"] = epoch + 1;
    if (!best_score || score < *best_score) {
      best_score = score;
      result.best = result.last.clone();
      result.best_epoch = epoch + 1;
      if (!files.dir.empty()) save_checkpoint(files.dir / "best.mkpt", result.best);
    }
    if (!files.dir.empty()) {
      if (cfg.keep_epoch_checkpoints) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03d.mkpt", epoch + 1);
        save_checkpoint(files.dir / "checkpoints" / name, result.last);
      }
      save_checkpoint(files.dir / "last.mkpt", result.last);
    }
    if (progress) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "epoch %d/%d  H %.4f  J %.4f  total %.4f  val %s  (%.1fs)\n", epoch + 1,
                    cfg.epochs, log.nll, log.jaccard, log.total,
                    log.val_total ? std::to_string(*log.val_total).c_str() : "-", log.wall_seconds);
      *progress << buf << std::flush;
    }
  }
  return result;
}

inline std::vector<int> keypoint_class_list(const ClassTaxonomy& tax) {
  std::vector<int> out;
  for (int c = 1; c < tax.num_classes(); ++c) out.push_back(c);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SFC training.

struct FrameSample {
  Tensor frame;
  SegMap target;
};

inline std::vector<FrameSample> frame_samples(const std::vector<VideoData>& videos, const MaskSpec& mask) {
  std::vector<FrameSample> out;
  for (const auto& v : videos)
    for (const auto& a : v.annotations) {
      out.push_back({v.frames.at(static_cast<std::size_t>(a.frame_index)), rasterize_masks(a, mask, v.height(), v.width())});
    }
  return out;
}

inline std::vector<VideoData> load_videos(const Dataset& ds, const std::vector<std::string>& ids) {
  std::vector<VideoData> out;
  for (const auto& id : ids) out.push_back(load_video(ds, id));
  return out;
}

/// Trains the single-frame model from scratch (or from `init` when given).
inline TrainResult train_sfc(const Dataset& ds, const TrainConfig& cfg, const std::filesystem::path& run_dir = {},
                             std::ostream* progress = nullptr, const std::optional<MiniSeg>& init = std::nullopt) {
  cfg.validate();
  const Split split = split_videos(ds.video_ids, cfg.val_fraction, cfg.seed);
  const MaskSpec mask{cfg.mask_radius, ds.taxonomy};
  const auto train = frame_samples(load_videos(ds, split.train), mask);
  const auto val = frame_samples(load_videos(ds, split.val), mask);
  MiniSeg net = init ? init->clone() : MiniSeg::init(ds.taxonomy.num_classes(), cfg.seed);
  if (net.num_classes() != ds.taxonomy.num_classes()) throw ValidationError("initial SFC model has the wrong class count");
  for (auto& p : net.parameters()) p.set_requires_grad(true);
  const auto classes = detail::keypoint_class_list(ds.taxonomy);

  std::vector<detail::ParamGroup> groups(1);
  groups[0].name = "sfc";
  groups[0].params = net.parameters();
  groups[0].schedule = cfg.schedule(cfg.sfc_lr);

  auto loss = [&](std::size_t i, int epoch, bool training) {
    const FrameSample& s = training ? train[i] : val[i];
    if (training && cfg.augment) {
      const AugmentParams p = draw_augment(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), i + 100),
                                           s.frame.dim(1), s.frame.dim(2), cfg.augmentation);
      const Tensor f = augment_frame(s.frame, p);
      const SegMap t = augment_segmap(s.target, p, ds.taxonomy);
      return composite_loss(predict_sfc(net, f), t, classes, cfg.background_weight);
    }
    return composite_loss(predict_sfc(net, s.frame), s.target, classes, cfg.background_weight);
  };
  auto snapshot = [&] {
    Checkpoint c{ds.taxonomy, net.clone(), std::nullopt, json::object()};
    c.meta["kind"] = "sfc";
    c.meta["train_config"] = to_json(cfg);
    return c;
  };
  json echo{{"command", "train-sfc"}, {"dataset", ds.root.string()}, {"train", to_json(cfg)},
            {"split", {{"train", split.train}, {"val", split.val}}}};
  const detail::RunFiles files{run_dir};
  files.begin(echo);
  return detail::run_training(cfg, train.size(), val.size(), groups, loss, snapshot, files, progress);
}

// ---------------------------------------------------------------------------
// MFC training.

inline std::vector<ClipWindow> filled_windows(const std::vector<VideoData>& videos, int k, const MaskSpec& mask,
                                              const FlowDepthProvider& provider) {
  std::vector<ClipWindow> out;
  for (const auto& v : videos)
    for (auto& w : make_windows(v, k, mask)) {
      provider.fill(w);
      if (static_cast<int>(w.flows.size()) != k - 1 || static_cast<int>(w.depths.size()) != k) {
        throw ValidationError("provider returned " + std::to_string(w.flows.size()) + " flows and " +
                              std::to_string(w.depths.size()) + " depths for K=" + std::to_string(k));
      }
      out.push_back(std::move(w));
    }
  return out;
}

inline ClipWindow augment_window(const ClipWindow& w, const AugmentParams& p, const ClassTaxonomy& tax) {
  ClipWindow out = w;
  for (auto& f : out.frames) f = augment_frame(f, p);
  for (auto& f : out.flows) f = augment_flow(f, p);
  for (auto& d : out.depths) d = augment_depth(d, p);
  out.target = augment_segmap(w.target, p, tax);
  return out;
}

/// SFC weights at the fine-tuning rate, MFCNet weights at their own rate,
/// both on the same step schedule.
inline std::vector<detail::ParamGroup> mfc_param_groups(const MiniSeg& sfc, const MfcNet& net, const TrainConfig& cfg) {
  std::vector<detail::ParamGroup> groups(2);
  groups[0].name = "sfc";
  groups[0].params = sfc.parameters();
  groups[0].schedule = cfg.schedule(cfg.mfc_finetune_lr);
  groups[1].name = "mfcnet";
  groups[1].params = net.parameters();
  groups[1].schedule = cfg.schedule(cfg.mfcnet_lr);
  return groups;
}

/// Fine-tunes the SFC model of `sfc_ckpt` jointly with a new MFCNet. Two
/// Adam groups: SFC weights at mfc_finetune_lr, MFCNet at mfcnet_lr, both on
/// the same step schedule. The loss uses the current-frame target only.
inline TrainResult train_mfc(const Dataset& ds, const Checkpoint& sfc_ckpt, const TrainConfig& cfg, MfcConfig mfc_cfg,
                             const FlowDepthProvider& provider, const std::filesystem::path& run_dir = {},
                             std::ostream* progress = nullptr) {
  cfg.validate();
  if (!(sfc_ckpt.taxonomy == ds.taxonomy)) {
    throw ValidationError("checkpoint taxonomy does not match the dataset taxonomy");
  }
  mfc_cfg.num_classes = ds.taxonomy.num_classes();
  mfc_cfg.validate();
  const Split split = split_videos(ds.video_ids, cfg.val_fraction, cfg.seed);
  const MaskSpec mask{cfg.mask_radius, ds.taxonomy};
  const auto train = filled_windows(load_videos(ds, split.train), mfc_cfg.k, mask, provider);
  const auto val = filled_windows(load_videos(ds, split.val), mfc_cfg.k, mask, provider);

  MiniSeg sfc = sfc_ckpt.sfc.clone();
  MfcNet net = cfg.mfc_passthrough_init ? MfcNet::init_passthrough(mfc_cfg, cfg.seed + 1)
                                        : MfcNet::init(mfc_cfg, cfg.seed + 1);
  const bool finetune = cfg.mfc_finetune_lr > 0.0f;
  for (auto& p : sfc.parameters()) p.set_requires_grad(finetune);
  const auto classes = detail::keypoint_class_list(ds.taxonomy);

  auto groups = mfc_param_groups(sfc, net, cfg);

  auto loss = [&](std::size_t i, int epoch, bool training) {
    const ClipWindow& raw = training ? train[i] : val[i];
    std::optional<ClipWindow> aug;
    if (training && cfg.augment) {
      aug = augment_window(raw,
                           draw_augment(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), i + 100),
                                        raw.frames[0].dim(1), raw.frames[0].dim(2), cfg.augmentation),
                           ds.taxonomy);
    }
    const ClipWindow& w = aug ? *aug : raw;
    std::vector<Tensor> probs;
    if (finetune) {
      for (const auto& f : w.frames) probs.push_back(predict_sfc(sfc, f));
    } else {
      NoGradScope ng;
      for (const auto& f : w.frames) probs.push_back(predict_sfc(sfc, f));
    }
    return composite_loss(predict_mfc(net, probs, w), w.target, classes, cfg.background_weight);
  };
  auto snapshot = [&] {
    Checkpoint c{ds.taxonomy, sfc.clone(), net.clone(), sfc_ckpt.meta};
    c.meta["kind"] = "mfc";
    c.meta["train_config"] = to_json(cfg);
    return c;
  };
  json echo{{"command", "train-mfc"}, {"dataset", ds.root.string()}, {"train", to_json(cfg)},
            {"mfc", to_json(mfc_cfg)}, {"split", {{"train", split.train}, {"val", split.val}}}};
  const detail::RunFiles files{run_dir};
  files.begin(echo);
  TrainResult r = detail::run_training(cfg, train.size(), val.size(), groups, loss, snapshot, files, progress);
  for (auto& p : sfc.parameters()) p.set_requires_grad(true);
  return r;
}

// ---------------------------------------------------------------------------
// Inference.

/// Per-frame probability maps for a whole video. MFC checkpoints run the
/// SFC model once per frame and fuse clamped windows of cached outputs.
inline std::vector<Tensor> predict_video(const Checkpoint& ckpt, const VideoData& video,
                                         const FlowDepthProvider* provider = nullptr) {
  NoGradScope ng;
  std::vector<Tensor> sfc_probs;
  for (const auto& f : video.frames) sfc_probs.push_back(predict_sfc(ckpt.sfc, f));
  if (!ckpt.mfc) return sfc_probs;
  if (!provider) throw UsageError("MFC checkpoint needs a flow/depth provider");
  const int k = ckpt.mfc->config().k;
  std::vector<Tensor> out;
  for (int t = 0; t < static_cast<int>(video.frames.size()); ++t) {
    ClipWindow w;
    w.video_id = video.id;
    w.t = t;
    w.frame_indices = window_indices(t, k);
    std::vector<Tensor> probs;
    for (int idx : w.frame_indices) {
      w.frames.push_back(video.frames[static_cast<std::size_t>(idx)]);
      probs.push_back(sfc_probs[static_cast<std::size_t>(idx)]);
    }
    provider->fill(w);
    out.push_back(predict_mfc(*ckpt.mfc, probs, w));
  }
  return out;
}

inline std::vector<TrackResult> results_from_probmaps(const std::vector<Tensor>& probs, const std::string& video_id,
                                                      const ClassTaxonomy& tax, std::int64_t min_area = kDefaultMinArea) {
  std::vector<TrackResult> out;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    TrackResult r = extract_keypoints(probs[t], tax, min_area);
    r.video_id = video_id;
    r.frame_index = static_cast<int>(t);
    out.push_back(std::move(r));
  }
  return out;
}

struct InferReport {
  std::vector<TrackResult> results;
  std::int64_t frames = 0;
  double seconds = 0.0;
  double fps() const { return seconds > 0.0 ? static_cast<double>(frames) / seconds : 0.0; }
};

inline InferReport infer(const Checkpoint& ckpt, const VideoData& video, const FlowDepthProvider* provider = nullptr,
                         std::int64_t min_area = kDefaultMinArea) {
  const auto t0 = std::chrono::steady_clock::now();
  InferReport r;
  r.results = results_from_probmaps(predict_video(ckpt, video, provider), video.id, ckpt.taxonomy, min_area);
  r.frames = static_cast<std::int64_t>(video.frames.size());
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Runs inference over every listed video of a dataset.
inline InferReport infer_dataset(const Checkpoint& ckpt, const Dataset& ds, const std::vector<std::string>& ids,
                                 const FlowDepthProvider* provider = nullptr, std::int64_t min_area = kDefaultMinArea) {
  if (!(ckpt.taxonomy == ds.taxonomy)) throw ValidationError("checkpoint taxonomy does not match the dataset taxonomy");
  InferReport all;
  for (const auto& id : ids) {
    const VideoData v = load_video(ds, id);
    InferReport r = infer(ckpt, v, provider, min_area);
    all.results.insert(all.results.end(), r.results.begin(), r.results.end());
    all.frames += r.frames;
    all.seconds += r.seconds;
  }
  return all;
}

struct Evaluation {
  std::vector<MatchRecord> records;
  MetricReport report;
};

inline Evaluation evaluate(const std::vector<TrackResult>& preds, const std::vector<KeypointAnnotation>& gts,
                           const ClassTaxonomy& tax, double tau) {
  Evaluation e;
  e.records = match_all(preds, gts, tau, tax.num_classes());
  e.report = aggregate(e.records, tax, tau);
  return e;
}

inline std::vector<KeypointAnnotation> dataset_annotations(const Dataset& ds, const std::vector<std::string>& ids) {
  std::vector<KeypointAnnotation> out;
  for (const auto& id : ids) {
    const auto anns = load_annotations(layout::annotations(ds.root, id), ds.taxonomy);
    out.insert(out.end(), anns.begin(), anns.end());
  }
  return out;
}

}  // namespace kptrack
