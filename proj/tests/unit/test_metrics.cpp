#include <gtest/gtest.h>

#include <cmath>

#include "cgmjepa/metrics.hpp"
#include "oracles.hpp"

using namespace cgmjepa;
using namespace cgmjepa::metrics;

namespace {

std::vector<int> random_labels(SplitMix64& r, std::size_t n) {
  std::vector<int> y(n);
  for (;;) {
    for (auto& v : y) v = static_cast<int>(r.below(2));
    if (std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), 0) > 0) return y;
  }
}

std::vector<double> coarse_scores(SplitMix64& r, std::size_t n) {
  std::vector<double> s(n);
  for (auto& v : s) v = static_cast<double>(r.below(5)) / 4.0;  // plenty of ties
  return s;
}

Eigen::MatrixXd random_points(SplitMix64& r, int n, int d, double sd = 1.0) {
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = sd * r.normal();
  return X;
}

}  // namespace

TEST(Auroc, SpecExamples) {
  EXPECT_EQ(auroc({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0}), 1.0);
  EXPECT_EQ(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
  EXPECT_EQ(auroc({0.5, 0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1, 1}), 0.5);
  EXPECT_THROW(auroc({0.1, 0.2}, {1, 1}), ValidationError);
  EXPECT_THROW(auroc({0.1, 0.2}, {1}), ValidationError);
}

TEST(Auroc, MatchesPairCountingWithTies) {
  SplitMix64 r(1);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + r.below(11);
    const auto y = random_labels(r, n);
    const auto s = coarse_scores(r, n);
    EXPECT_EQ(auroc(s, y), oracle::auroc_pairs(s, y));
  }
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
  SplitMix64 r(2);
  const auto y = random_labels(r, 30);
  std::vector<double> s(30), t(30);
  for (int i = 0; i < 30; ++i) {
    s[i] = r.normal();
    t[i] = std::exp(3 * s[i]) + 7;
  }
  EXPECT_DOUBLE_EQ(auroc(s, y), auroc(t, y));
  std::vector<double> neg(30);
  for (int i = 0; i < 30; ++i) neg[i] = -s[i];
  EXPECT_NEAR(auroc(neg, y), 1 - auroc(s, y), 1e-15);
}

TEST(AveragePrecision, PerfectAndThresholdOracle) {
  EXPECT_EQ(average_precision({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0}), 1.0);
  // 4-point toy: ranking 1,0,1,0 -> 1/2 * 1 + 1/2 * 2/3.
  EXPECT_NEAR(average_precision({0.9, 0.7, 0.5, 0.1}, {1, 0, 1, 0}), 0.5 + 1.0 / 3.0, 1e-15);
  SplitMix64 r(3);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + r.below(11);
    const auto y = random_labels(r, n);
    const auto s = coarse_scores(r, n);
    EXPECT_EQ(average_precision(s, y), oracle::average_precision_thresholds(s, y));
  }
}

TEST(AveragePrecision, RandomScoresApproachPrevalence) {
  SplitMix64 r(4);
  std::vector<double> s(2000);
  std::vector<int> y(2000);
  for (int i = 0; i < 2000; ++i) {
    s[i] = r.uniform();
    y[i] = r.uniform() < 0.3;
  }
  EXPECT_NEAR(average_precision(s, y), 0.3, 0.05);
}

TEST(F1, ThresholdAndEdgeCases) {
  EXPECT_EQ(f1_at_threshold({0.9, 0.6, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
  EXPECT_EQ(f1_at_threshold({0.5, 0.6}, {1, 1}), 2.0 / 3.0);  // 0.5 is not > 0.5
  EXPECT_EQ(f1_score({0, 0}, {0, 0}), 0.0);
  EXPECT_NEAR(f1_score({1, 1, 0, 0}, {1, 0, 1, 0}), 0.5, 1e-15);
}

TEST(Geometry, IdealSeparation) {
  Eigen::MatrixXd X(4, 2);
  X << 0, 0, 0, 0, 1, 0, 1, 0;
  const auto g = geometry(X, {0, 0, 1, 1});
  EXPECT_EQ(g.silhouette, 1.0);
  EXPECT_EQ(g.db, 0.0);
  EXPECT_TRUE(g.bw_degenerate);
  EXPECT_TRUE(std::isinf(g.bw_ratio));
}

TEST(Geometry, AllPointsIdentical) {
  const Eigen::MatrixXd X = Eigen::MatrixXd::Constant(5, 3, 2.0);
  const auto g = geometry(X, {0, 1, 0, 1, 1});
  EXPECT_TRUE(g.bw_degenerate);
  EXPECT_TRUE(std::isinf(g.bw_ratio));
  EXPECT_EQ(g.intra, 0.0);
  EXPECT_EQ(g.inter, 0.0);
  EXPECT_EQ(g.db, 0.0);
  EXPECT_EQ(g.silhouette, 0.0);
}

TEST(Geometry, SixPointToyMatchesDefinition) {
  Eigen::MatrixXd X(6, 2);
  X << 0, 0, 1, 0, 0, 2, 5, 5, 6, 4, 7, 6;
  const std::vector<int> lab{0, 0, 0, 1, 1, 1};
  const auto g = geometry(X, lab);
  const auto o = oracle::geometry(X, lab, 2);
  EXPECT_NEAR(g.silhouette, o.silhouette, 1e-9);
  EXPECT_NEAR(g.ch, o.ch, 1e-9);
  EXPECT_NEAR(g.db, o.db, 1e-9);
  EXPECT_NEAR(g.bw_ratio, o.bw_ratio, 1e-9);
  EXPECT_NEAR(g.intra, o.intra, 1e-9);
  EXPECT_NEAR(g.inter, o.inter, 1e-9);
}

TEST(Geometry, RandomInstancesMatchDefinitionAndRanges) {
  SplitMix64 r(5);
  for (int t = 0; t < 200; ++t) {
    const int n = 4 + static_cast<int>(r.below(7));
    const int k = 2 + static_cast<int>(r.below(2));
    const auto X = random_points(r, n, 3);
    std::vector<int> lab(n);
    for (int i = 0; i < n; ++i) lab[i] = i < k ? i : static_cast<int>(r.below(k));
    const auto g = geometry(X, lab);
    const auto o = oracle::geometry(X, lab, k);
    EXPECT_NEAR(g.silhouette, o.silhouette, 1e-9);
    EXPECT_NEAR(g.ch, o.ch, 1e-9 * std::max(1.0, o.ch));
    EXPECT_NEAR(g.db, o.db, 1e-9 * std::max(1.0, o.db));
    EXPECT_NEAR(g.bw_ratio, o.bw_ratio, 1e-9 * std::max(1.0, o.bw_ratio));
    EXPECT_GE(g.silhouette, -1);
    EXPECT_LE(g.silhouette, 1);
  }
}

TEST(Geometry, LabelIdsAreArbitrary) {
  SplitMix64 r(6);
  const auto X = random_points(r, 8, 2);
  const auto a = geometry(X, {0, 0, 0, 1, 1, 1, 0, 1});
  const auto b = geometry(X, {7, 7, 7, -2, -2, -2, 7, -2});
  EXPECT_DOUBLE_EQ(a.silhouette, b.silhouette);
  EXPECT_DOUBLE_EQ(a.ch, b.ch);
  EXPECT_THROW(geometry(X, std::vector<int>(8, 3)), ValidationError);
}

TEST(KMeans, RecoversSeparatedBlobs) {
  SplitMix64 r(7);
  Eigen::MatrixXd X = random_points(r, 12, 2, 0.3);
  for (int i = 6; i < 12; ++i) X(i, 0) += 10;
  const auto km = kmeans2(X, 1);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(km.labels[i], i < 6 ? km.labels[0] : 1 - km.labels[0]);
  EXPECT_EQ(km.labels[0], 0);  // canonical: first point in cluster 0
}

TEST(KMeans, MatchesExhaustiveOptimumOnMostTrials) {
  SplitMix64 r(8);
  int hits = 0;
  for (int t = 0; t < 200; ++t) {
    const int n = 3 + static_cast<int>(r.below(10));
    const auto X = random_points(r, n, 2);
    const auto km = kmeans2(X, static_cast<std::uint64_t>(t));
    hits += km.inertia <= oracle::best_two_partition_inertia(X) + 1e-9;
  }
  EXPECT_GE(hits, 190);
}

TEST(KMeans, LloydInertiaNeverIncreasesAndSeeded) {
  SplitMix64 r(9);
  for (int t = 0; t < 50; ++t) {
    const auto X = random_points(r, 20, 3);
    const auto km = kmeans2(X, 5);
    for (std::size_t i = 1; i < km.inertia_trace.size(); ++i)
      EXPECT_LE(km.inertia_trace[i], km.inertia_trace[i - 1] + 1e-12);
    EXPECT_EQ(kmeans2(X, 5).labels, km.labels);
  }
}

TEST(KMeans, DuplicatedDataKeepsPartition) {
  SplitMix64 r(10);
  const auto X = random_points(r, 9, 2);
  Eigen::MatrixXd X2(18, 2);
  X2 << X, X;
  const auto a = kmeans2(X, 3), b = kmeans2(X2, 3);
  for (int i = 0; i < 9; ++i) {
    EXPECT_EQ(b.labels[i], b.labels[i + 9]);
    EXPECT_EQ(a.labels[i] == a.labels[0], b.labels[i] == b.labels[0]);
  }
  EXPECT_NEAR(b.inertia, 2 * a.inertia, 1e-9);
}

TEST(PartitionAgreement, SpecExamples) {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  EXPECT_EQ(ari(a, a), 1.0);
  EXPECT_NEAR(nmi(a, a), 1.0, 1e-15);
  EXPECT_EQ(ari({0, 1, 2, 3, 4}, {0, 0, 0, 0, 0}), 0.0);
  EXPECT_EQ(ari({0, 0, 1, 1}, {5, 5, 9, 9}), 1.0);
}

TEST(PartitionAgreement, EightElementToyPair) {
  const std::vector<int> a{0, 0, 0, 1, 1, 1, 2, 2}, b{0, 0, 1, 1, 1, 2, 2, 2};
  // Contingency [[2,1,0],[0,2,1],[0,0,2]]: index 3, sum_a 7, sum_b 7, C(8,2) 28.
  const double expected = 7.0 * 7.0 / 28.0;
  EXPECT_NEAR(ari(a, b), (3 - expected) / (7 - expected), 1e-12);
  EXPECT_NEAR(ari(a, b), oracle::ari_pairs(a, b), 1e-12);
  EXPECT_NEAR(nmi(a, b), oracle::nmi_probabilities(a, b), 1e-12);
}

TEST(PartitionAgreement, RandomPartitionsMatchOracles) {
  SplitMix64 r(11);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + r.below(11);
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(r.below(3));
      b[i] = static_cast<int>(r.below(4));
    }
    EXPECT_NEAR(ari(a, b), oracle::ari_pairs(a, b), 1e-9);
    const double o = std::clamp(oracle::nmi_probabilities(a, b), 0.0, 1.0);
    EXPECT_NEAR(nmi(a, b), o, 1e-9);
    EXPECT_NEAR(ari(a, b), ari(b, a), 1e-12);
  }
}

TEST(Divergence, AnalyticCases) {
  auto emb = [](double x, double y) {
    Eigen::MatrixXd m(1, 2);
    m << x, y;
    return m;
  };
  const std::vector<int> lab{0, 1, 0, 1};
  EXPECT_EQ(patch_divergence({emb(1, 2), emb(1, 2), emb(1, 2), emb(1, 2)}, lab).distance[0], 0.0);
  EXPECT_EQ(patch_divergence({emb(1, 0), emb(0, 3), emb(1, 0), emb(0, 3)}, lab).distance[0], 1.0);
  EXPECT_EQ(patch_divergence({emb(1, 1), emb(-2, -2), emb(1, 1), emb(-2, -2)}, lab).distance[0], 2.0);
  const auto z = patch_divergence({emb(1, 0), emb(0, 0), emb(-1, 0), emb(0, 0)}, lab);
  EXPECT_TRUE(z.undefined[0]);
  EXPECT_TRUE(std::isnan(z.distance[0]));
}

TEST(Divergence, PerPatchValuesInRange) {
  SplitMix64 r(12);
  std::vector<Eigen::MatrixXd> e;
  for (int s = 0; s < 10; ++s) e.push_back(random_points(r, 4, 6));
  const auto d = patch_divergence(e, {0, 1, 0, 1, 0, 1, 0, 1, 0, 1});
  ASSERT_EQ(d.distance.size(), 4u);
  for (double v : d.distance) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 2);
  }
}

namespace {

// Subjects s0..s{n-1}; demographics give field `sex` levels by index.
std::map<std::string, Demographics> demo(int n, std::function<std::string(int)> sex) {
  std::map<std::string, Demographics> d;
  for (int i = 0; i < n; ++i) d["s" + std::to_string(i)].sex = sex(i);
  return d;
}

}  // namespace

TEST(Subgroups, SmallGroupsGiveEmptyTableWithNote) {
  std::vector<Prediction> p;
  for (int i = 0; i < 8; ++i) p.push_back({"s" + std::to_string(i), 0.1 * i, i % 2});
  const auto rep = subgroup_report(p, demo(8, [](int i) { return i < 4 ? "F" : "M"; }));
  EXPECT_TRUE(rep.rows.empty());
  EXPECT_FALSE(rep.note.empty());
  EXPECT_TRUE(rep.gap.empty());
}

TEST(Subgroups, GapIsMaxMinusMin) {
  // Level F: 5 positives x 2 negatives = 10 pairs, 9 correct -> 0.9.
  // Level M: 5 positives x 2 negatives, 7 correct -> 0.7.
  std::vector<Prediction> p;
  const double fpos[] = {0.9, 0.8, 0.7, 0.6, 0.3}, fneg[] = {0.5, 0.2};
  const double mpos[] = {0.9, 0.8, 0.7, 0.35, 0.3}, mneg[] = {0.75, 0.1};
  int id = 0;
  for (double s : fpos) p.push_back({"s" + std::to_string(id++), s, 1});
  for (double s : fneg) p.push_back({"s" + std::to_string(id++), s, 0});
  for (double s : mpos) p.push_back({"s" + std::to_string(id++), s, 1});
  for (double s : mneg) p.push_back({"s" + std::to_string(id++), s, 0});
  const auto rep = subgroup_report(p, demo(14, [](int i) { return i < 7 ? "F" : "M"; }));
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_NEAR(rep.rows[0].auroc, 0.9, 1e-12);
  EXPECT_NEAR(rep.rows[1].auroc, 0.7, 1e-12);
  EXPECT_NEAR(rep.gap.at("sex"), 0.2, 1e-12);
  EXPECT_EQ(rep.rows[0].n_subjects, 7);
}

TEST(Subgroups, SingleClassLevelIsFlaggedAndDeltaIsBMinusA) {
  std::vector<Prediction> a, b;
  for (int i = 0; i < 12; ++i) {
    const int y = i < 6 ? i % 2 : 1;  // level M is all positive
    a.push_back({"s" + std::to_string(i), i % 3 * 0.3, y});
    b.push_back({"s" + std::to_string(i), y == 1 ? 0.9 : 0.1, y});
  }
  // Repeated folds pool predictions without double counting subjects.
  a.insert(a.end(), a.begin(), a.end());
  const auto d = demo(12, [](int i) { return i < 6 ? "F" : "M"; });
  const auto ra = subgroup_report(a, d), rb = subgroup_report(b, d);
  ASSERT_EQ(ra.rows.size(), 2u);
  EXPECT_EQ(ra.rows[0].n_subjects, 6);
  EXPECT_TRUE(ra.rows[0].available);
  EXPECT_FALSE(ra.rows[1].available);
  EXPECT_FALSE(ra.gap.count("sex"));
  const auto delta = subgroup_delta(ra, rb);
  ASSERT_EQ(delta.size(), 1u);
  EXPECT_EQ(delta[0].level, "F");
  EXPECT_DOUBLE_EQ(delta[0].delta, rb.rows[0].auroc - ra.rows[0].auroc);
  EXPECT_EQ(delta[0].auroc_b, 1.0);
}

TEST(Wilcoxon, FiveAllPositive) {
  const auto r = wilcoxon_signed_rank({0, 0, 0, 0, 0}, {1, 2, 3, 4, 5});
  EXPECT_NEAR(r.p_value, 0.0625, 1e-15);
  EXPECT_TRUE(r.exact);
  EXPECT_EQ(r.w_plus, 15);
}

TEST(Wilcoxon, IdenticalSeriesGiveUnitP) {
  const std::vector<double> a{0.7, 0.8, 0.9, 0.75, 0.6, 0.65};
  const auto r = wilcoxon_signed_rank(a, a);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_TRUE(r.all_zero);
  const auto bs = paired_bootstrap(a, a, 1, 2000);
  EXPECT_LE(bs.ci_low, 0.0);
  EXPECT_GE(bs.ci_high, 0.0);
}

TEST(Wilcoxon, ExactMatchesSignEnumerationWithTiesAndZeros) {
  SplitMix64 r(13);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 5 + r.below(8);
    std::vector<double> a(n), b(n), d(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<double>(r.below(4));
      b[i] = static_cast<double>(r.below(4));
      d[i] = b[i] - a[i];
    }
    const auto res = wilcoxon_signed_rank(a, b);
    if (res.all_zero) continue;
    EXPECT_NEAR(res.p_value, oracle::wilcoxon_enumerate(d), 1e-12);
  }
}

TEST(Wilcoxon, NormalApproximationBeyondTwentyFive) {
  std::vector<double> a(30, 0.0), b(30);
  for (int i = 0; i < 30; ++i) b[i] = (i % 3 == 0 ? -1 : 1) * (i + 1);
  const auto r = wilcoxon_signed_rank(a, b);
  EXPECT_FALSE(r.exact);
  double wplus = 0;
  for (int i = 0; i < 30; ++i)
    if (b[i] > 0) wplus += i + 1;
  EXPECT_EQ(r.w_plus, wplus);
  const double mean = 30 * 31 / 4.0, sd = std::sqrt(30 * 31 * 61 / 24.0);
  const double z = (std::abs(wplus - mean) - 0.5) / sd;
  EXPECT_NEAR(r.p_value, std::erfc(z / std::sqrt(2.0)), 1e-12);
  EXPECT_THROW(wilcoxon_signed_rank({1, 2}, {1, 2}), ValidationError);
}

TEST(Bootstrap, SeededAndCoversMean) {
  SplitMix64 r(14);
  std::vector<double> a(40), b(40);
  for (int i = 0; i < 40; ++i) {
    a[i] = r.normal();
    b[i] = a[i] + 0.3 + 0.2 * r.normal();
  }
  const auto x = paired_bootstrap(a, b, 7), y = paired_bootstrap(a, b, 7), z = paired_bootstrap(a, b, 8);
  EXPECT_EQ(x.ci_low, y.ci_low);
  EXPECT_EQ(x.ci_high, y.ci_high);
  EXPECT_NE(x.ci_low, z.ci_low);
  EXPECT_LT(x.ci_low, x.mean_diff);
  EXPECT_GT(x.ci_high, x.mean_diff);
  EXPECT_GT(x.ci_low, 0.0);
  EXPECT_EQ(x.resamples, 10000);
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_EQ(percentile_linear({1, 2, 3, 4, 5}, 50), 3);
  EXPECT_DOUBLE_EQ(percentile_linear({4, 1, 3, 2}, 2.5), 1.075);
  EXPECT_THROW(percentile_linear({}, 50), ValidationError);
}
