#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "kptrack/metrics.hpp"
#include "support/temp_dir.hpp"

using namespace kptrack;
using kptrack::testing::TempDir;

namespace {

KeypointAnnotation gt_frame(int frame, std::vector<Keypoint> kps) {
  KeypointAnnotation a;
  a.video_id = "v";
  a.frame_index = frame;
  a.keypoints = std::move(kps);
  return a;
}

TrackResult pred_frame(int frame, std::vector<Detection> ds) { return {"v", frame, std::move(ds)}; }

std::size_t count(const std::vector<MatchRecord>& rs, Outcome o) {
  return static_cast<std::size_t>(std::count_if(rs.begin(), rs.end(), [o](const auto& r) { return r.outcome == o; }));
}

std::vector<KeypointAnnotation> random_gt(std::mt19937& rng, const ClassTaxonomy& tax, int frames) {
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::vector<KeypointAnnotation> out;
  for (int f = 0; f < frames; ++f) {
    KeypointAnnotation a = gt_frame(f, {});
    for (int c = 1; c < tax.num_classes(); ++c)
      for (int i = 0; i < tax.max_instances_of(c); ++i) a.keypoints.push_back({c, u(rng), u(rng), rng() % 4 != 0});
    out.push_back(a);
  }
  return out;
}

std::vector<TrackResult> perturbed(std::mt19937& rng, const std::vector<KeypointAnnotation>& gts, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  std::vector<TrackResult> out;
  for (const auto& g : gts) {
    TrackResult r = pred_frame(g.frame_index, {});
    for (const auto& k : g.keypoints)
      if (k.visible && rng() % 6 != 0) r.detections.push_back({k.class_id, k.x + n(rng), k.y + n(rng), 1.0});
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST(MatchFrame, ExactHitIsTruePositive) {
  const auto rs = match_frame(pred_frame(0, {{2, 10, 20, 1}}), gt_frame(0, {{2, 10, 20, true}}), 5.0, 11);
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_EQ(rs[0].outcome, Outcome::TP);
  EXPECT_DOUBLE_EQ(*rs[0].error, 0.0);
}

TEST(MatchFrame, BeyondTauIsFalsePositiveAndNegative) {
  const double tau = 5.0;
  const auto rs = match_frame(pred_frame(0, {{2, 10 + tau + 1, 20, 1}}), gt_frame(0, {{2, 10, 20, true}}), tau, 11);
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_EQ(count(rs, Outcome::FP), 1u);
  EXPECT_EQ(count(rs, Outcome::FN), 1u);
  // Exactly at tau still counts.
  const auto at = match_frame(pred_frame(0, {{2, 15, 20, 1}}), gt_frame(0, {{2, 10, 20, true}}), tau, 11);
  EXPECT_EQ(count(at, Outcome::TP), 1u);
}

TEST(MatchFrame, InvisibleGroundTruthIsIgnored) {
  const auto rs = match_frame(pred_frame(0, {}), gt_frame(0, {{3, 1, 1, false}}), 5.0, 11);
  EXPECT_TRUE(rs.empty());
  const auto fp = match_frame(pred_frame(0, {{3, 1, 1, 1}}), gt_frame(0, {{3, 1, 1, false}}), 5.0, 11);
  ASSERT_EQ(fp.size(), 1u);
  EXPECT_EQ(fp[0].outcome, Outcome::FP);
}

TEST(MatchFrame, CrossedPairingBeatsIndexPairing) {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(0.0, 60.0), jitter(-1.0, 1.0);
  auto d = [](const Detection& p, const Keypoint& g) { return std::hypot(p.x - g.x, p.y - g.y); };
  int trials = 0;
  while (trials < 200) {
    const Keypoint g0{1, u(rng), u(rng), true}, g1{1, u(rng), u(rng), true};
    if (std::hypot(g0.x - g1.x, g0.y - g1.y) < 8.0) continue;
    ++trials;
    // Predictions listed in the opposite order to the ground truth.
    const Detection p0{1, g1.x + jitter(rng), g1.y + jitter(rng), 1}, p1{1, g0.x + jitter(rng), g0.y + jitter(rng), 1};
    const auto rs = match_frame(pred_frame(0, {p0, p1}), gt_frame(0, {g0, g1}), 1e6, 5);
    ASSERT_EQ(count(rs, Outcome::TP), 2u);
    double greedy = 0.0;
    for (const auto& r : rs) greedy += *r.error;
    const double naive = d(p0, g0) + d(p1, g1);
    const double brute = std::min(naive, d(p0, g1) + d(p1, g0));
    EXPECT_LE(greedy, naive + 1e-9);
    EXPECT_NEAR(greedy, brute, 1e-9);
  }
}

TEST(MatchFrame, TaxonomyMismatchThrows) {
  EXPECT_THROW(match_frame(pred_frame(0, {{11, 0, 0, 1}}), gt_frame(0, {}), 5.0, 11), ValidationError);
  EXPECT_THROW(match_frame(pred_frame(0, {}), gt_frame(0, {{12, 0, 0, true}}), 5.0, 11), ValidationError);
  EXPECT_THROW(match_frame(pred_frame(0, {}), gt_frame(0, {}), 0.0, 11), UsageError);
}

TEST(Aggregate, UniformErrorGivesZeroSpread) {
  const auto tax = ClassTaxonomy::endovis();
  std::vector<MatchRecord> rs;
  for (int f = 0; f < 3; ++f) {
    TrackResult p = pred_frame(f, {});
    KeypointAnnotation g = gt_frame(f, {});
    for (int c = 1; c < tax.num_classes(); ++c) {
      g.keypoints.push_back({c, 50.0, 50.0, true});
      p.detections.push_back({c, 53.0, 50.0, 1.0});
    }
    const auto m = match_frame(p, g, 10.0, tax.num_classes());
    rs.insert(rs.end(), m.begin(), m.end());
  }
  const auto rep = aggregate(rs, tax, 10.0);
  EXPECT_NEAR(*rep.rmse_mean, 3.0, 1e-12);
  EXPECT_NEAR(*rep.rmse_std, 0.0, 1e-12);
  EXPECT_NEAR(*rep.pooled_rmse, 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(*rep.precision, 100.0);
  EXPECT_DOUBLE_EQ(*rep.accuracy, 100.0);
}

TEST(Aggregate, PooledRmseFormula) {
  const auto tax = ClassTaxonomy::jigsaws();
  const auto rs1 = match_frame(pred_frame(0, {{2, 3, 0, 1}, {4, 4, 0, 1}}),
                               gt_frame(0, {{2, 0, 0, true}, {4, 0, 0, true}}), 10.0, tax.num_classes());
  const auto rep = aggregate(rs1, tax, 10.0);
  EXPECT_NEAR(*rep.pooled_rmse, std::sqrt((9.0 + 16.0) / 2.0), 1e-12);
  EXPECT_NEAR(*rep.pooled_rmse, 3.536, 5e-4);
  EXPECT_NEAR(*rep.rmse_mean, 3.5, 1e-12);
  EXPECT_NEAR(*rep.rmse_std, 0.5, 1e-12);
  // Classes with no TP report no RMSE and are left out of the spread.
  EXPECT_FALSE(rep.classes[0].rmse.has_value());
  EXPECT_FALSE(rep.classes[0].precision.has_value());
}

TEST(Aggregate, CountsAndRates) {
  const auto tax = ClassTaxonomy::endovis();
  // Class 1: TP; class 2: FP + FN; class 3: FN.
  const auto rs = match_frame(pred_frame(0, {{1, 0, 0, 1}, {2, 90, 90, 1}}),
                              gt_frame(0, {{1, 0, 0, true}, {2, 0, 0, true}, {3, 5, 5, true}}), 5.0, 11);
  const auto rep = aggregate(rs, tax, 5.0);
  EXPECT_EQ(rep.tp, 1);
  EXPECT_EQ(rep.fp, 1);
  EXPECT_EQ(rep.fn, 2);
  EXPECT_DOUBLE_EQ(*rep.precision, 50.0);
  EXPECT_NEAR(*rep.recall, 100.0 / 3.0, 1e-12);
  EXPECT_NEAR(*rep.mean_recall, 100.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(*rep.mean_precision, 50.0);
  for (const auto& c : rep.classes) {
    for (const auto& v : {c.precision, c.recall, c.accuracy})
      if (v) {
        EXPECT_GE(*v, 0.0);
        EXPECT_LE(*v, 100.0);
      }
  }
}

TEST(Aggregate, EmptyRecordsThrow) {
  EXPECT_THROW(aggregate({}, ClassTaxonomy::endovis(), 5.0), ValidationError);
}

TEST(MetricsProperties, GroundTruthAgainstItself) {
  const auto tax = ClassTaxonomy::jigsaws();
  std::mt19937 rng(21);
  for (double tau : {0.01, 1.0, 50.0}) {
    const auto gts = random_gt(rng, tax, 10);
    std::vector<TrackResult> preds;
    for (const auto& g : gts) {
      TrackResult r = pred_frame(g.frame_index, {});
      for (const auto& k : g.keypoints)
        if (k.visible) r.detections.push_back({k.class_id, k.x, k.y, 1.0});
      preds.push_back(r);
    }
    const auto rep = aggregate(match_all(preds, gts, tau, tax.num_classes()), tax, tau);
    EXPECT_DOUBLE_EQ(*rep.precision, 100.0);
    EXPECT_DOUBLE_EQ(*rep.recall, 100.0);
    EXPECT_DOUBLE_EQ(*rep.accuracy, 100.0);
    EXPECT_DOUBLE_EQ(*rep.rmse_mean, 0.0);
    EXPECT_DOUBLE_EQ(*rep.rmse_std, 0.0);
  }
}

TEST(MetricsProperties, PermutationInvariant) {
  const auto tax = ClassTaxonomy::endovis();
  std::mt19937 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto gts = random_gt(rng, tax, 12);
    auto preds = perturbed(rng, gts, 3.0);
    const auto a = to_json(aggregate(match_all(preds, gts, 6.0, 11), tax, 6.0));
    std::shuffle(gts.begin(), gts.end(), rng);
    std::shuffle(preds.begin(), preds.end(), rng);
    const auto b = to_json(aggregate(match_all(preds, gts, 6.0, 11), tax, 6.0));
    for (const char* key : {"tp", "fp", "fn"}) EXPECT_EQ(a[key], b[key]);
    for (const char* key : {"precision", "recall", "pooled_rmse", "rmse_mean", "rmse_std"})
      EXPECT_NEAR(a[key].get<double>(), b[key].get<double>(), 1e-9);
  }
}

TEST(MetricsProperties, ShrinkingTauNeverAddsTruePositives) {
  const auto tax = ClassTaxonomy::jigsaws();
  std::mt19937 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto gts = random_gt(rng, tax, 8);
    const auto preds = perturbed(rng, gts, 8.0);
    std::int64_t prev = -1;
    for (double tau : {40.0, 20.0, 10.0, 5.0, 2.0, 1.0, 0.5}) {
      const auto rep = aggregate(match_all(preds, gts, tau, tax.num_classes()), tax, tau);
      if (prev >= 0) EXPECT_LE(rep.tp, prev);
      prev = rep.tp;
    }
  }
}

TEST(MetricsOutput, TauDefaultAndFormats) {
  EXPECT_DOUBLE_EQ(default_tau(576, 720), 20.0);
  EXPECT_DOUBLE_EQ(default_tau(128, 160), 20.0 * 128.0 / 576.0);
  const auto tax = ClassTaxonomy::jigsaws();
  const auto rs = match_frame(pred_frame(0, {{2, 3, 0, 1}, {4, 4, 0, 1}}),
                              gt_frame(0, {{2, 0, 0, true}, {4, 0, 0, true}, {1, 9, 9, true}}), 10.0, 5);
  const auto rep = aggregate(rs, tax, 10.0);
  const std::string table = format_report(rep);
  EXPECT_NE(table.find("3.5 +/- 0.5 px"), std::string::npos) << table;
  EXPECT_NE(table.find("L_ToolTip"), std::string::npos);
  const json j = to_json(rep);
  EXPECT_TRUE(j["classes"][2]["rmse"].is_null());
  TempDir dir;
  write_records_csv(dir.path() / "m.csv", rs, tax);
  std::ifstream is(dir.path() / "m.csv");
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) ++lines;
  EXPECT_EQ(lines, 4);
}
