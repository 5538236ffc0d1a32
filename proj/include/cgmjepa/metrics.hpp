#pragma once

// Classification metrics, embedding geometry, 2-means clustering, partition
// agreement, per-patch class divergence, subgroup tables and paired tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cgmjepa/common.hpp"
#include "cgmjepa/data.hpp"
#include "cgmjepa/rng.hpp"

namespace cgmjepa::metrics {

inline void check_binary(const std::vector<int>& labels, std::size_t n, const char* who) {
  if (labels.size() != n) throw ValidationError(std::string(who) + ": scores/labels length mismatch");
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError(std::string(who) + ": labels must be 0/1");
    (y ? pos : neg) = true;
  }
  if (!pos || !neg) throw ValidationError(std::string(who) + ": both classes must be present");
}

// Mann-Whitney: (sum of positive ranks - n1(n1+1)/2) / (n1 n0), average ranks for ties.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_binary(labels, scores.size(), "auroc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t n1 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]]) rank_sum += avg;
    i = j;
  }
  for (int y : labels) n1 += static_cast<std::size_t>(y);
  const double n0 = static_cast<double>(n - n1), d1 = static_cast<double>(n1);
  return (rank_sum - d1 * (d1 + 1) / 2) / (d1 * n0);
}

// Average precision: sum over descending distinct thresholds of
// (recall_k - recall_{k-1}) * precision_k.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_binary(labels, scores.size(), "prauc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double npos = 0;
  for (int y : labels) npos += y;
  double tp = 0, fp = 0, prev_recall = 0, ap = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? tp : fp) += 1;
      ++j;
    }
    const double recall = tp / npos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

// 2 tp / (2 tp + fp + fn); 0 when there are no positives at all.
inline double f1_score(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw ValidationError("f1: length mismatch");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] && labels[i]) ++tp;
    else if (preds[i]) ++fp;
    else if (labels[i]) ++fn;
  }
  const double d = 2 * tp + fp + fn;
  return d == 0 ? 0.0 : 2 * tp / d;
}

inline double f1_at_threshold(const std::vector<double>& probs, const std::vector<int>& labels,
                              double threshold = 0.5) {
  std::vector<int> preds(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) preds[i] = probs[i] > threshold ? 1 : 0;
  return f1_score(preds, labels);
}

// ---------------------------------------------------------------------------
// Geometry (Euclidean). Points are rows of X.

struct Geometry {
  double silhouette = 0;
  double ch = 0;
  double db = 0;
  double bw_ratio = 0;  // inter / intra
  double intra = 0;     // mean point-to-own-centroid distance
  double inter = 0;     // mean pairwise centroid distance
  bool bw_degenerate = false;  // intra == 0; bw_ratio is +inf
};

// Relabels arbitrary ids to 0..k-1 in order of first appearance.
inline std::vector<int> compact_labels(const std::vector<int>& labels, int* k_out = nullptr) {
  std::map<int, int> remap;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = remap.find(labels[i]);
    if (it == remap.end()) it = remap.emplace(labels[i], static_cast<int>(remap.size())).first;
    out[i] = it->second;
  }
  if (k_out) *k_out = static_cast<int>(remap.size());
  return out;
}

inline Eigen::MatrixXd centroids(const Eigen::MatrixXd& X, const std::vector<int>& lab, int k,
                                 std::vector<int>* counts = nullptr) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(k, X.cols());
  std::vector<int> n(k, 0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    c.row(lab[i]) += X.row(i);
    ++n[lab[i]];
  }
  for (int j = 0; j < k; ++j)
    if (n[j] > 0) c.row(j) /= n[j];
  if (counts) *counts = n;
  return c;
}

// Silhouette terms of singleton clusters are 0; a point with a = b = 0 scores 0.
// Calinski-Harabasz is 1 when within-cluster dispersion is 0; Davies-Bouldin
// is 0 when all spreads or all centroid distances are 0.
inline Geometry geometry(const Eigen::MatrixXd& X, const std::vector<int>& cluster_labels) {
  const Eigen::Index n = X.rows();
  if (static_cast<std::size_t>(n) != cluster_labels.size()) throw ValidationError("geometry: size mismatch");
  int k = 0;
  const std::vector<int> lab = compact_labels(cluster_labels, &k);
  if (k < 2) throw ValidationError("geometry: need at least 2 clusters");
  std::vector<int> cnt;
  const Eigen::MatrixXd C = centroids(X, lab, k, &cnt);
  Geometry g;

  Eigen::MatrixXd D(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) D(i, j) = (X.row(i) - X.row(j)).norm();
  double sil = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (cnt[lab[i]] == 1) continue;
    std::vector<double> sum(k, 0.0);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) sum[lab[j]] += D(i, j);
    const double a = sum[lab[i]] / (cnt[lab[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c)
      if (c != lab[i]) b = std::min(b, sum[c] / cnt[c]);
    const double m = std::max(a, b);
    if (m > 0) sil += (b - a) / m;
  }
  g.silhouette = sil / static_cast<double>(n);

  const Eigen::RowVectorXd mu = X.colwise().mean();
  double B = 0, W = 0;
  std::vector<double> spread(k, 0.0);
  for (int c = 0; c < k; ++c) B += cnt[c] * (C.row(c) - mu).squaredNorm();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = (X.row(i) - C.row(lab[i])).norm();
    W += d * d;
    spread[lab[i]] += d;
    g.intra += d;
  }
  g.ch = W == 0 ? 1.0 : (B / (k - 1)) / (W / static_cast<double>(n - k));
  for (int c = 0; c < k; ++c) spread[c] /= cnt[c];
  g.intra /= static_cast<double>(n);

  double inter_sum = 0;
  int pairs = 0;
  bool all_spread_zero = std::all_of(spread.begin(), spread.end(), [](double s) { return s == 0; });
  bool all_cdist_zero = true;
  Eigen::MatrixXd cd(k, k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      cd(a, b) = (C.row(a) - C.row(b)).norm();
      if (a < b) {
        inter_sum += cd(a, b);
        ++pairs;
        if (cd(a, b) != 0) all_cdist_zero = false;
      }
    }
  g.inter = inter_sum / pairs;
  if (all_spread_zero || all_cdist_zero) {
    g.db = 0;
  } else {
    double db = 0;
    for (int a = 0; a < k; ++a) {
      double worst = 0;
      for (int b = 0; b < k; ++b) {
        if (a == b || cd(a, b) == 0) continue;
        worst = std::max(worst, (spread[a] + spread[b]) / cd(a, b));
      }
      db += worst;
    }
    g.db = db / k;
  }
  if (g.intra == 0) {
    g.bw_ratio = std::numeric_limits<double>::infinity();
    g.bw_degenerate = true;
  } else {
    g.bw_ratio = g.inter / g.intra;
  }
  return g;
}

// ---------------------------------------------------------------------------
// 2-means: k-means++ seeding, Lloyd to an assignment fixpoint, best of restarts.

struct KMeansResult {
  std::vector<int> labels;  // canonical: point 0 is in cluster 0
  double inertia = 0;
  Eigen::MatrixXd centers;
  std::vector<double> inertia_trace;  // per Lloyd iteration of the winning restart
  int iterations = 0;
};

inline double inertia_of(const Eigen::MatrixXd& X, const std::vector<int>& lab, const Eigen::MatrixXd& C) {
  double s = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) s += (X.row(i) - C.row(lab[i])).squaredNorm();
  return s;
}

inline KMeansResult lloyd(const Eigen::MatrixXd& X, Eigen::MatrixXd C, int max_iter = 300) {
  const Eigen::Index n = X.rows();
  const int k = static_cast<int>(C.rows());
  KMeansResult r;
  r.labels.assign(n, -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = (X.row(i) - C.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (X.row(i) - C.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (r.labels[i] != best) {
        r.labels[i] = best;
        changed = true;
      }
    }
    r.inertia_trace.push_back(inertia_of(X, r.labels, C));
    r.iterations = it + 1;
    if (!changed && it > 0) break;
    std::vector<int> cnt;
    const Eigen::MatrixXd Cn = centroids(X, r.labels, k, &cnt);
    for (int c = 0; c < k; ++c)
      if (cnt[c] > 0) C.row(c) = Cn.row(c);  // empty clusters keep their center
  }
  r.centers = C;
  r.inertia = inertia_of(X, r.labels, C);
  return r;
}

inline Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& X, int k, SplitMix64& rng) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd C(k, X.cols());
  C.row(0) = X.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(n);
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (int j = 0; j < c; ++j) m = std::min(m, (X.row(i) - C.row(j)).squaredNorm());
      d2[i] = m;
      total += m;
    }
    Eigen::Index pick = n - 1;
    if (total == 0) {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    } else {
      const double u = rng.uniform() * total;
      double acc = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    C.row(c) = X.row(pick);
  }
  return C;
}

inline KMeansResult kmeans2(const Eigen::MatrixXd& X, std::uint64_t seed, int restarts = 10) {
  if (X.rows() < 2) throw ValidationError("kmeans2: need at least 2 points");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    SplitMix64 rng(derive_seed(seed, 0x6B6D, static_cast<std::uint64_t>(r)));
    KMeansResult cur = lloyd(X, kmeanspp_init(X, 2, rng));
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  if (best.labels[0] != 0) {
    for (int& l : best.labels) l = 1 - l;
    best.centers.row(0).swap(best.centers.row(1));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Partition agreement

struct Contingency {
  std::vector<std::vector<double>> n;  // rows: classes of a, cols: classes of b
  std::vector<double> a_sum, b_sum;
  double total = 0;
};

inline Contingency contingency(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw ValidationError("partition agreement: length mismatch");
  if (a.size() < 2) throw ValidationError("partition agreement: need at least 2 elements");
  int ka = 0, kb = 0;
  const auto la = compact_labels(a, &ka), lb = compact_labels(b, &kb);
  Contingency c;
  c.n.assign(ka, std::vector<double>(kb, 0.0));
  c.a_sum.assign(ka, 0.0);
  c.b_sum.assign(kb, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.n[la[i]][lb[i]] += 1;
    c.a_sum[la[i]] += 1;
    c.b_sum[lb[i]] += 1;
  }
  c.total = static_cast<double>(a.size());
  return c;
}

inline double ari(const std::vector<int>& a, const std::vector<int>& b) {
  const Contingency c = contingency(a, b);
  auto comb2 = [](double x) { return x * (x - 1) / 2; };
  double index = 0, sa = 0, sb = 0;
  for (const auto& row : c.n)
    for (double v : row) index += comb2(v);
  for (double v : c.a_sum) sa += comb2(v);
  for (double v : c.b_sum) sb += comb2(v);
  const double expected = sa * sb / comb2(c.total);
  const double max_index = (sa + sb) / 2;
  if (max_index == expected) return 1.0;  // both trivial partitions of the same kind
  return (index - expected) / (max_index - expected);
}

// Mutual information over the arithmetic mean of the two entropies; two
// single-cluster partitions give 1.
inline double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  const Contingency c = contingency(a, b);
  const double N = c.total;
  auto entropy = [&](const std::vector<double>& s) {
    double h = 0;
    for (double v : s)
      if (v > 0) h -= (v / N) * std::log(v / N);
    return h;
  };
  const double ha = entropy(c.a_sum), hb = entropy(c.b_sum);
  if (ha == 0 && hb == 0) return 1.0;
  double mi = 0;
  for (std::size_t i = 0; i < c.n.size(); ++i)
    for (std::size_t j = 0; j < c.n[i].size(); ++j) {
      const double v = c.n[i][j];
      if (v > 0) mi += (v / N) * std::log(v * N / (c.a_sum[i] * c.b_sum[j]));
    }
  const double denom = 0.5 * (ha + hb);
  return std::clamp(mi / denom, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Per-patch label divergence

struct DivergenceProfile {
  std::vector<double> distance;  // 1 - cos(mean class 1, mean class 0) per patch
  std::vector<bool> undefined;   // a class mean had zero norm
};

// per_patch[s] is a P x D matrix of token outputs for subject s.
inline DivergenceProfile patch_divergence(const std::vector<Eigen::MatrixXd>& per_patch,
                                          const std::vector<int>& labels) {
  check_binary(labels, per_patch.size(), "patch_divergence");
  const Eigen::Index P = per_patch.front().rows(), D = per_patch.front().cols();
  DivergenceProfile out;
  for (Eigen::Index p = 0; p < P; ++p) {
    Eigen::RowVectorXd m0 = Eigen::RowVectorXd::Zero(D), m1 = Eigen::RowVectorXd::Zero(D);
    int n0 = 0, n1 = 0;
    for (std::size_t s = 0; s < per_patch.size(); ++s) {
      if (per_patch[s].rows() != P || per_patch[s].cols() != D)
        throw ValidationError("patch_divergence: inconsistent per-patch shapes");
      if (labels[s]) {
        m1 += per_patch[s].row(p);
        ++n1;
      } else {
        m0 += per_patch[s].row(p);
        ++n0;
      }
    }
    m0 /= n0;
    m1 /= n1;
    const double a = m0.squaredNorm(), b = m1.squaredNorm();
    if (a == 0 || b == 0) {
      out.distance.push_back(std::numeric_limits<double>::quiet_NaN());
      out.undefined.push_back(true);
    } else {
      const double cosv = std::clamp(m0.dot(m1) / std::sqrt(a * b), -1.0, 1.0);
      out.distance.push_back(1.0 - cosv);
      out.undefined.push_back(false);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subgroups

struct Prediction {
  std::string subject_id;
  double score = 0;
  int label = 0;
};

struct SubgroupRow {
  std::string field, level;
  int n_subjects = 0;
  bool available = false;  // false: one class only among pooled predictions
  double auroc = 0;
};

struct SubgroupReport {
  std::vector<SubgroupRow> rows;
  std::map<std::string, double> gap;  // field -> max - min available AUROC
  std::string note;
};

inline const std::optional<std::string>& demographic_field(const Demographics& d, const std::string& field) {
  if (field == "sex") return d.sex;
  if (field == "age_band") return d.age_band;
  if (field == "bmi_band") return d.bmi_band;
  if (field == "ethnicity") return d.ethnicity;
  throw ValidationError("unknown demographic field " + field);
}

inline const std::vector<std::string>& demographic_fields() {
  static const std::vector<std::string> f = {"sex", "age_band", "bmi_band", "ethnicity"};
  return f;
}

// Pools fold predictions per (field, level); levels with fewer than min_n
// distinct subjects are omitted, single-class levels are kept but flagged.
inline SubgroupReport subgroup_report(const std::vector<Prediction>& preds,
                                      const std::map<std::string, Demographics>& demographics, int min_n = 5) {
  SubgroupReport rep;
  for (const auto& field : demographic_fields()) {
    std::map<std::string, std::vector<const Prediction*>> by_level;
    std::map<std::string, std::map<std::string, int>> subjects;
    for (const auto& p : preds) {
      auto it = demographics.find(p.subject_id);
      if (it == demographics.end()) continue;
      const auto& v = demographic_field(it->second, field);
      if (!v) continue;
      by_level[*v].push_back(&p);
      subjects[*v][p.subject_id] = 1;
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    int avail = 0;
    for (const auto& [level, ps] : by_level) {
      SubgroupRow row{field, level, static_cast<int>(subjects[level].size()), false, 0};
      if (row.n_subjects < min_n) continue;
      std::vector<double> s;
      std::vector<int> y;
      for (const auto* p : ps) {
        s.push_back(p->score);
        y.push_back(p->label);
      }
      const bool both = std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), 0) > 0;
      if (both) {
        row.available = true;
        row.auroc = auroc(s, y);
        lo = std::min(lo, row.auroc);
        hi = std::max(hi, row.auroc);
        ++avail;
      }
      rep.rows.push_back(row);
    }
    if (avail >= 2) rep.gap[field] = hi - lo;
  }
  if (rep.rows.empty())
    rep.note = "no subgroup reaches n >= " + std::to_string(min_n) + " subjects";
  return rep;
}

struct SubgroupDelta {
  std::string field, level;
  int n_subjects = 0;
  double auroc_a = 0, auroc_b = 0, delta = 0;  // delta = B - A
};

inline std::vector<SubgroupDelta> subgroup_delta(const SubgroupReport& a, const SubgroupReport& b) {
  std::vector<SubgroupDelta> out;
  for (const auto& ra : a.rows) {
    if (!ra.available) continue;
    for (const auto& rb : b.rows)
      if (rb.available && rb.field == ra.field && rb.level == ra.level)
        out.push_back({ra.field, ra.level, ra.n_subjects, ra.auroc, rb.auroc, rb.auroc - ra.auroc});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paired tests

struct WilcoxonResult {
  double w_plus = 0;
  double p_value = 1;
  int n_used = 0;         // non-zero differences
  bool exact = true;
  bool all_zero = false;
};

// Two-sided signed-rank test on d = b - a. Zero differences are discarded,
// tied |d| receive average ranks. Exact null distribution for n <= 25 (by
// dynamic programming over doubled ranks), otherwise the normal approximation
// with tie and continuity correction.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("wilcoxon: length mismatch");
  if (a.size() < 5) throw ValidationError("wilcoxon: need at least 5 pairs");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (b[i] - a[i] != 0) d.push_back(b[i] - a[i]);
  WilcoxonResult r;
  r.n_used = static_cast<int>(d.size());
  if (d.empty()) {
    r.all_zero = true;
    return r;
  }
  const std::size_t n = d.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  std::vector<int> rank2(n);  // doubled ranks
  double tie_term = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(d[idx[j]]) == std::abs(d[idx[i]])) ++j;
    const int r2 = static_cast<int>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank2[idx[k]] = r2;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  int w2 = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w2 += rank2[i];
  r.w_plus = w2 / 2.0;
  const double nn = static_cast<double>(n);
  if (n <= 25) {
    const int total2 = static_cast<int>(n * (n + 1));
    std::vector<double> cnt(total2 + 1, 0.0);
    cnt[0] = 1;
    for (std::size_t i = 0; i < n; ++i)
      for (int s = total2; s >= rank2[i]; --s) cnt[s] += cnt[s - rank2[i]];
    const double all = std::pow(2.0, nn);
    double le = 0, ge = 0;
    for (int s = 0; s <= total2; ++s) {
      if (s <= w2) le += cnt[s];
      if (s >= w2) ge += cnt[s];
    }
    r.p_value = std::min(1.0, 2.0 * std::min(le, ge) / all);
    r.exact = true;
  } else {
    const double mean = nn * (nn + 1) / 4;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24 - tie_term / 48;
    const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
    r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    r.exact = false;
  }
  return r;
}

// Linear-interpolation percentile (q in [0, 100]) of an unsorted sample.
inline double percentile_linear(std::vector<double> v, double q) {
  if (v.empty()) throw ValidationError("percentile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct BootstrapResult {
  double mean_diff = 0;  // mean(b - a)
  double ci_low = 0, ci_high = 0;
  int resamples = 0;
};

inline BootstrapResult paired_bootstrap(const std::vector<double>& a, const std::vector<double>& b,
                                        std::uint64_t seed, int resamples = 10000, double level = 0.95) {
  if (a.size() != b.size() || a.empty()) throw ValidationError("bootstrap: need equal-length non-empty series");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = b[i] - a[i];
  BootstrapResult r;
  r.resamples = resamples;
  r.mean_diff = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  SplitMix64 rng(derive_seed(seed, 0x626F6F74));
  std::vector<double> means(resamples);
  for (int k = 0; k < resamples; ++k) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += d[rng.below(n)];
    means[k] = s / static_cast<double>(n);
  }
  const double alpha = (1 - level) / 2 * 100;
  r.ci_low = percentile_linear(means, alpha);
  r.ci_high = percentile_linear(means, 100 - alpha);
  return r;
}

}  // namespace cgmjepa::metrics
