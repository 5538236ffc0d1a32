#pragma once

// Frozen-encoder embeddings, the PCA baseline, the L2 logistic probe with
// inner C selection, and the repeated stratified subject-level 2-fold protocol.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "cgmjepa/data.hpp"
#include "cgmjepa/jepa.hpp"
#include "cgmjepa/metrics.hpp"
#include "cgmjepa/spline.hpp"
#include "cgmjepa/views.hpp"

namespace cgmjepa::probe {

enum class Endpoint { ir, beta };

inline std::string_view to_string(Endpoint e) { return e == Endpoint::ir ? "ir" : "beta"; }
inline Endpoint parse_endpoint(std::string_view s) {
  if (s == "ir") return Endpoint::ir;
  if (s == "beta") return Endpoint::beta;
  throw ValidationError("unknown endpoint '" + std::string(s) + "' (expected ir or beta)");
}

inline int label_of(const Labels& l, Endpoint e) { return e == Endpoint::ir ? l.ir : l.beta; }

enum class RegimeName { venous_in_domain, venous_to_cgm, home_cgm_in_domain };

struct EvalRegime {
  RegimeName name;
  Stream train_stream;
  Stream test_stream;
};

inline EvalRegime regime(RegimeName n) {
  switch (n) {
    case RegimeName::venous_in_domain: return {n, Stream::ctru_venous, Stream::ctru_venous};
    case RegimeName::venous_to_cgm: return {n, Stream::ctru_venous, Stream::cgm_home_mean};
    case RegimeName::home_cgm_in_domain: return {n, Stream::cgm_home_mean, Stream::cgm_home_mean};
  }
  throw ValidationError("unknown regime");
}

inline std::string_view to_string(RegimeName n) {
  switch (n) {
    case RegimeName::venous_in_domain: return "venous_in_domain";
    case RegimeName::venous_to_cgm: return "venous_to_cgm";
    case RegimeName::home_cgm_in_domain: return "home_cgm_in_domain";
  }
  return "?";
}

inline RegimeName parse_regime(std::string_view s) {
  for (auto n : {RegimeName::venous_in_domain, RegimeName::venous_to_cgm, RegimeName::home_cgm_in_domain})
    if (to_string(n) == s) return n;
  throw ValidationError("unknown regime '" + std::string(s) + "'");
}

inline constexpr RegimeName kAllRegimes[] = {RegimeName::venous_in_domain, RegimeName::venous_to_cgm,
                                             RegimeName::home_cgm_in_domain};

// ---------------------------------------------------------------------------
// Traces and embeddings

inline double smoothing_lambda(SplitName s) {
  return s == SplitName::initial ? kVenousLambdaInitial : kVenousLambdaValidation;
}

// subject -> stream -> smoothed 39-slot trace, including the two derived mean
// streams whenever at least one component is present.
using TraceTable = std::map<std::string, std::map<Stream, AlignedTrace>>;

inline TraceTable prepare_traces(const std::vector<GlucoseSeries>& series, SplitName split) {
  std::map<std::string, std::map<Stream, AlignedTrace>> raw;
  for (const auto& s : series) {
    if (s.stream == Stream::free_living) continue;
    raw[s.subject_id][s.stream] = align_to_grid(s).trace;
  }
  const double lam = smoothing_lambda(split);
  TraceTable out;
  for (auto& [id, streams] : raw) {
    auto collect = [&](std::initializer_list<Stream> parts) {
      std::vector<AlignedTrace> v;
      for (Stream p : parts) {
        auto it = streams.find(p);
        if (it != streams.end()) v.push_back(it->second);
      }
      return v;
    };
    if (!streams.count(Stream::cgm_home_mean)) {
      auto c = collect({Stream::home_cgm_1, Stream::home_cgm_2});
      if (!c.empty()) streams[Stream::cgm_home_mean] = mean_stream(c, Stream::cgm_home_mean);
    }
    if (!streams.count(Stream::cgm_all_mean)) {
      auto c = collect({Stream::ctru_cgm, Stream::home_cgm_1, Stream::home_cgm_2});
      if (!c.empty()) streams[Stream::cgm_all_mean] = mean_stream(c, Stream::cgm_all_mean);
    }
    for (auto& [st, tr] : streams)
      if (tr.observed() >= 2) out[id][st] = smooth_trace(tr, lam);
  }
  return out;
}

struct EncoderOutput {
  std::vector<double> pooled;  // D
  Eigen::MatrixXd per_patch;   // P x D
};

// Frozen forward through the context encoder on every patch; mean over patch outputs.
inline EncoderOutput encode(const ModelState<float>& s, const PatchTokens& tokens) {
  nn::Tape<float> tp(&s.params);
  const Mat<float> x = tokens_matrix<float>(tokens);
  const Var out = nn::encode_patches(tp, s.context, s.cfg.encoder, x, iota_positions(tokens.patches), /*track=*/0);
  const Mat<float>& v = tp.value(out);
  EncoderOutput e;
  e.per_patch = v.cast<double>();
  e.pooled.resize(static_cast<std::size_t>(v.cols()));
  const Eigen::RowVectorXd m = e.per_patch.colwise().mean();
  for (Eigen::Index j = 0; j < v.cols(); ++j) e.pooled[static_cast<std::size_t>(j)] = m(j);
  return e;
}

inline EncoderOutput embed_trace(const ModelState<float>& s, const AlignedTrace& trace) {
  if (!trace.smoothed) throw ValidationError("embed: trace must be smoothed first");
  return encode(s, patchify_ogtt(trace));
}

struct Embedding {
  std::string subject_id;
  Stream stream;
  std::vector<double> vector;
  Eigen::MatrixXd per_patch;
};

// subject -> stream -> embedding
using EmbeddingTable = std::map<std::string, std::map<Stream, Embedding>>;

inline EmbeddingTable embed_all(const ModelState<float>& s, const TraceTable& traces) {
  EmbeddingTable out;
  for (const auto& [id, streams] : traces)
    for (const auto& [st, tr] : streams) {
      EncoderOutput e = embed_trace(s, tr);
      out[id][st] = Embedding{id, st, std::move(e.pooled), std::move(e.per_patch)};
    }
  return out;
}

// Raw smoothed 39-slot traces as features, the input to the PCA baseline.
inline EmbeddingTable trace_features(const TraceTable& traces) {
  EmbeddingTable out;
  for (const auto& [id, streams] : traces)
    for (const auto& [st, tr] : streams)
      out[id][st] = Embedding{id, st, std::vector<double>(tr.values.begin(), tr.values.end()), {}};
  return out;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;  // k x dim, rows orthonormal, by decreasing variance
  Eigen::VectorXd variance;    // k explained variances (ddof 1)
  double total_variance = 0;

  Eigen::MatrixXd transform(const Eigen::MatrixXd& X) const {
    return (X.rowwise() - mean) * components.transpose();
  }
  Eigen::MatrixXd inverse_transform(const Eigen::MatrixXd& Z) const {
    return (Z * components).rowwise() + mean;
  }
};

// Centered covariance eigendecomposition; each component's sign is fixed so its
// largest-magnitude loading is positive.
inline PcaModel fit_pca(const Eigen::MatrixXd& X, int k) {
  const Eigen::Index n = X.rows(), d = X.cols();
  if (n < 2) throw ValidationError("pca: need at least 2 training vectors");
  if (k < 1 || k > std::min<Eigen::Index>(n - 1, d))
    throw ValidationError("pca: k=" + std::to_string(k) + " exceeds min(n-1, dim)=" +
                          std::to_string(std::min<Eigen::Index>(n - 1, d)));
  PcaModel m;
  m.mean = X.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - m.mean;
  const Eigen::MatrixXd cov = Xc.transpose() * Xc / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw Error("pca: eigendecomposition failed");
  m.components.resize(k, d);
  m.variance.resize(k);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - i);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.components.row(i) = v.transpose();
    m.variance(i) = std::max(0.0, es.eigenvalues()(d - 1 - i));
  }
  m.total_variance = cov.trace();
  return m;
}

inline int default_pca_k(int n_train, int dim) { return std::min({10, n_train - 1, dim}); }

// ---------------------------------------------------------------------------
// Logistic regression: minimize C * sum_i w_i logloss_i + 0.5 ||beta||^2
// (intercept unpenalized) by damped Newton.

struct LogisticModel {
  Eigen::VectorXd beta;
  double intercept = 0;
  double C = 1;
  int iterations = 0;
  double grad_norm = 0;

  double decision(const Eigen::RowVectorXd& x) const { return x.dot(beta) + intercept; }
  std::vector<double> predict_proba(const Eigen::MatrixXd& X) const {
    std::vector<double> p(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) p[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-decision(X.row(i))));
    return p;
  }
};

inline std::vector<double> balanced_weights(const std::vector<int>& y) {
  const double n = static_cast<double>(y.size());
  double n1 = 0;
  for (int v : y) n1 += v;
  const double n0 = n - n1;
  if (n1 == 0 || n0 == 0) throw ValidationError("logistic: single-class training set");
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) w[i] = y[i] ? n / (2 * n1) : n / (2 * n0);
  return w;
}

inline constexpr double kLogisticTol = 1e-6;
inline constexpr int kLogisticMaxIter = 1000;

inline double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline LogisticModel fit_logistic(const Eigen::MatrixXd& X, const std::vector<int>& y, double C,
                                  const std::vector<double>& w) {
  const Eigen::Index n = X.rows(), d = X.cols();
  Eigen::MatrixXd A(n, d + 1);
  A << X, Eigen::VectorXd::Ones(n);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  auto objective = [&](const Eigen::VectorXd& th) {
    const Eigen::VectorXd z = A * th;
    double f = 0;
    for (Eigen::Index i = 0; i < n; ++i) f += w[i] * (log1pexp(z(i)) - y[i] * z(i));
    return C * f + 0.5 * th.head(d).squaredNorm();
  };
  LogisticModel m;
  m.C = C;
  double f = objective(theta);
  for (int it = 0; it < kLogisticMaxIter; ++it) {
    const Eigen::VectorXd z = A * theta;
    Eigen::VectorXd r(n), s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-z(i)));
      r(i) = C * w[i] * (p - y[i]);
      s(i) = C * w[i] * p * (1 - p);
    }
    Eigen::VectorXd g = A.transpose() * r;
    g.head(d) += theta.head(d);
    m.grad_norm = g.norm();
    m.iterations = it;
    if (m.grad_norm < kLogisticTol) break;
    Eigen::MatrixXd H = A.transpose() * s.asDiagonal() * A;
    H.diagonal().head(d).array() += 1.0;
    H(d, d) += 1e-12;
    const Eigen::VectorXd step = H.ldlt().solve(g);
    double t = 1.0;
    Eigen::VectorXd next = theta - step;
    double fn = objective(next);
    const double slope = g.dot(step);  // minus the directional derivative along -step
    while (fn > f - 1e-4 * t * slope && t > 1e-10) {
      t *= 0.5;
      next = theta - t * step;
      fn = objective(next);
    }
    if (!(fn <= f)) break;  // no further decrease representable
    theta = next;
    const bool stalled = f - fn <= 1e-15 * std::max(1.0, std::abs(f));
    f = fn;
    if (stalled) {
      m.iterations = it + 1;
      break;
    }
  }
  m.beta = theta.head(d);
  m.intercept = theta(d);
  return m;
}

// ---------------------------------------------------------------------------
// Stratified 2-fold assignment

// Per class, a seeded shuffle sends the first half to fold 0 and the rest to
// fold 1; an odd class gives its extra member to fold (seed + class) % 2 so the
// extras alternate with seed parity.
inline std::vector<int> stratified_two_fold(const std::vector<int>& y, std::uint64_t seed, std::uint64_t attempt = 0) {
  std::vector<int> fold(y.size(), 0);
  for (int c = 0; c < 2; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == c) members.push_back(i);
    SplitMix64 rng(derive_seed(seed, 0x666F6C64, static_cast<std::uint64_t>(c), attempt));
    rng.shuffle(members);
    std::size_t n0 = members.size() / 2;
    if (members.size() % 2 == 1 && (seed + static_cast<std::uint64_t>(c)) % 2 == 0) ++n0;
    for (std::size_t k = 0; k < members.size(); ++k) fold[members[k]] = k < n0 ? 0 : 1;
  }
  return fold;
}

inline bool folds_two_class(const std::vector<int>& y, const std::vector<int>& fold) {
  int cnt[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < y.size(); ++i) ++cnt[fold[i]][y[i]];
  return cnt[0][0] && cnt[0][1] && cnt[1][0] && cnt[1][1];
}

struct FoldAssignment {
  std::vector<int> fold;
  int retries = 0;
};

inline constexpr int kMaxFoldRetries = 100;

inline FoldAssignment assign_folds(const std::vector<int>& y, std::uint64_t seed) {
  for (int a = 0; a <= kMaxFoldRetries; ++a) {
    auto f = stratified_two_fold(y, seed, static_cast<std::uint64_t>(a));
    if (folds_two_class(y, f)) return {std::move(f), a};
  }
  throw ValidationError("protocol: cannot form two-class folds (each class needs at least 2 subjects)");
}

// Stratified subsample of `idx` keeping round-half-up(portion * n_c) per class.
// Returns nullopt when fewer than 2 per class would remain.
inline std::optional<std::vector<std::size_t>> stratified_subsample(const std::vector<std::size_t>& idx,
                                                                   const std::vector<int>& y, double portion,
                                                                   std::uint64_t seed) {
  if (portion >= 1.0) return idx;
  std::vector<std::size_t> out;
  for (int c = 0; c < 2; ++c) {
    std::vector<std::size_t> m;
    for (std::size_t i : idx)
      if (y[i] == c) m.push_back(i);
    const std::size_t keep = static_cast<std::size_t>(std::floor(portion * static_cast<double>(m.size()) + 0.5));
    if (keep < 2) return std::nullopt;
    SplitMix64 rng(derive_seed(seed, 0x706F7274, static_cast<std::uint64_t>(c)));
    rng.shuffle(m);
    out.insert(out.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Inner model selection

inline const std::vector<double>& default_c_grid() {
  static const std::vector<double> g = {1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0};
  return g;
}

struct CvResult {
  LogisticModel model;
  double best_C = 1;
  std::vector<double> inner_auroc;  // per grid value
};

inline Eigen::MatrixXd select_rows(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

template <class V>
std::vector<V> select(const std::vector<V>& v, const std::vector<std::size_t>& rows) {
  std::vector<V> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(v[r]);
  return out;
}

// Inner stratified 2-fold CV over the grid scored by mean validation AUROC;
// ties go to the smallest C. Inner folds whose validation side holds a single
// class are not scored; if nothing can be scored C = 1 is used. The winner is
// refit on all of X.
inline CvResult logreg_cv(const Eigen::MatrixXd& X, const std::vector<int>& y, std::uint64_t seed,
                          const std::vector<double>& grid = default_c_grid()) {
  balanced_weights(y);  // rejects single-class input
  CvResult res;
  const std::vector<int> fold = stratified_two_fold(y, derive_seed(seed, 0x696E6E));
  double best = -1;
  bool any = false;
  for (double C : grid) {
    double sum = 0;
    int scored = 0;
    for (int f = 0; f < 2; ++f) {
      std::vector<std::size_t> tr, va;
      for (std::size_t i = 0; i < y.size(); ++i) (fold[i] == f ? va : tr).push_back(i);
      const auto ytr = select(y, tr), yva = select(y, va);
      const bool tr_ok = std::count(ytr.begin(), ytr.end(), 1) > 0 && std::count(ytr.begin(), ytr.end(), 0) > 0;
      const bool va_ok = std::count(yva.begin(), yva.end(), 1) > 0 && std::count(yva.begin(), yva.end(), 0) > 0;
      if (!tr_ok || !va_ok) continue;
      const LogisticModel m = fit_logistic(select_rows(X, tr), ytr, C, balanced_weights(ytr));
      sum += metrics::auroc(m.predict_proba(select_rows(X, va)), yva);
      ++scored;
    }
    const double score = scored ? sum / scored : std::numeric_limits<double>::quiet_NaN();
    res.inner_auroc.push_back(score);
    if (scored && score > best) {
      best = score;
      res.best_C = C;
      any = true;
    }
  }
  if (!any) res.best_C = 1.0;
  res.model = fit_logistic(X, y, res.best_C, balanced_weights(y));
  return res;
}

// ---------------------------------------------------------------------------
// Outer protocol

// Maps (train features, test features) of one fold to the features the probe
// sees; fit only on the train side (e.g. PCA).
using FoldTransform = std::function<void(Eigen::MatrixXd& train, Eigen::MatrixXd& test)>;

inline FoldTransform pca_transform(int k = -1) {
  return [k](Eigen::MatrixXd& train, Eigen::MatrixXd& test) {
    const int kk = k > 0 ? k : default_pca_k(static_cast<int>(train.rows()), static_cast<int>(train.cols()));
    const PcaModel m = fit_pca(train, kk);
    train = m.transform(train);
    test = m.transform(test);
  };
}

struct ProbeInput {
  std::vector<std::string> subjects;
  std::vector<int> labels;
  Eigen::MatrixXd train_features;  // from the regime's train stream
  Eigen::MatrixXd test_features;   // from the regime's test stream
};

// Rows follow split.subjects order. Throws if a subject lacks either stream.
inline ProbeInput make_input(const EmbeddingTable& emb, const CohortSplit& split, const EvalRegime& reg,
                             Endpoint ep) {
  ProbeInput in;
  const std::size_t n = split.subjects.size();
  std::optional<Eigen::Index> dim;
  auto get = [&](const std::string& id, Stream st) -> const std::vector<double>& {
    auto it = emb.find(id);
    if (it == emb.end() || !it->second.count(st))
      throw ValidationError("probe: subject " + id + " has no " + std::string(cgmjepa::to_string(st)) +
                            " embedding");
    return it->second.at(st).vector;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& id = split.subjects[i];
    const auto& a = get(id, reg.train_stream);
    const auto& b = get(id, reg.test_stream);
    if (!dim) {
      dim = static_cast<Eigen::Index>(a.size());
      in.train_features.resize(static_cast<Eigen::Index>(n), *dim);
      in.test_features.resize(static_cast<Eigen::Index>(n), *dim);
    }
    if (static_cast<Eigen::Index>(a.size()) != *dim || static_cast<Eigen::Index>(b.size()) != *dim)
      throw ValidationError("probe: inconsistent embedding dimensions");
    for (Eigen::Index j = 0; j < *dim; ++j) {
      in.train_features(static_cast<Eigen::Index>(i), j) = a[static_cast<std::size_t>(j)];
      in.test_features(static_cast<Eigen::Index>(i), j) = b[static_cast<std::size_t>(j)];
    }
    in.subjects.push_back(id);
    in.labels.push_back(label_of(split.labels.at(id), ep));
  }
  return in;
}

struct FoldRecord {
  int seed = 0;
  int fold = 0;
  double auroc = 0, f1 = 0, prauc = 0;
  double best_C = 0;
  int n_train = 0, n_test = 0;
  int retries = 0;
  std::vector<std::size_t> train_idx, test_idx;
  std::vector<double> test_scores;
};

struct MetricSummary {
  double mean = 0, std = 0;
};

struct ProbeReport {
  std::string encoder;
  RegimeName regime = RegimeName::home_cgm_in_domain;
  Endpoint endpoint = Endpoint::ir;
  double portion = 1.0;
  bool available = true;
  std::string note;
  std::vector<FoldRecord> folds;
  MetricSummary auroc, f1, prauc;
  int total_retries = 0;
};

struct ProtocolOptions {
  int seeds = 20;
  std::uint64_t base_seed = 0;
  std::vector<double> c_grid = default_c_grid();
  double portion = 1.0;
  FoldTransform transform;
  int workers = 1;
};

// Population standard deviation over fold records.
inline MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(v.size()));
  return s;
}

// One report cell: seeds x 2 folds. Fold assignment depends only on the seed
// and labels, so every regime sees the same folds.
inline ProbeReport run_protocol(const ProbeInput& in, RegimeName reg, Endpoint ep, const ProtocolOptions& opt = {}) {
  ProbeReport rep;
  rep.regime = reg;
  rep.endpoint = ep;
  rep.portion = opt.portion;
  const std::size_t n = in.labels.size();
  std::vector<FoldRecord> records(static_cast<std::size_t>(opt.seeds) * 2);
  std::vector<int> unavailable(records.size(), 0);

  auto run_seed = [&](std::size_t si) {
    const std::uint64_t seed = opt.base_seed + si;
    const FoldAssignment fa = assign_folds(in.labels, seed);
    for (int f = 0; f < 2; ++f) {
      FoldRecord& r = records[si * 2 + static_cast<std::size_t>(f)];
      r.seed = static_cast<int>(seed);
      r.fold = f;
      r.retries = fa.retries;
      std::vector<std::size_t> tr, te;
      for (std::size_t i = 0; i < n; ++i) (fa.fold[i] == f ? te : tr).push_back(i);
      auto sub = stratified_subsample(tr, in.labels, opt.portion, derive_seed(seed, static_cast<std::uint64_t>(f)));
      if (!sub) {
        unavailable[si * 2 + static_cast<std::size_t>(f)] = 1;
        continue;
      }
      tr = *sub;
      Eigen::MatrixXd Xtr = select_rows(in.train_features, tr);
      Eigen::MatrixXd Xte = select_rows(in.test_features, te);
      if (opt.transform) opt.transform(Xtr, Xte);
      const auto ytr = select(in.labels, tr), yte = select(in.labels, te);
      const CvResult cv = logreg_cv(Xtr, ytr, derive_seed(seed, 0x7072, static_cast<std::uint64_t>(f)), opt.c_grid);
      r.test_scores = cv.model.predict_proba(Xte);
      r.auroc = metrics::auroc(r.test_scores, yte);
      r.prauc = metrics::average_precision(r.test_scores, yte);
      r.f1 = metrics::f1_at_threshold(r.test_scores, yte, 0.5);
      r.best_C = cv.best_C;
      r.n_train = static_cast<int>(tr.size());
      r.n_test = static_cast<int>(te.size());
      r.train_idx = std::move(tr);
      r.test_idx = std::move(te);
    }
  };

  const int w = std::max(1, std::min(opt.workers, opt.seeds));
  if (w == 1) {
    for (int s = 0; s < opt.seeds; ++s) run_seed(static_cast<std::size_t>(s));
  } else {
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t)
      pool.emplace_back([&] {
        try {
          for (int s = next++; s < opt.seeds; s = next++) run_seed(static_cast<std::size_t>(s));
        } catch (...) {
          std::lock_guard<std::mutex> lk(mu);
          if (!err) err = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
  }

  if (std::any_of(unavailable.begin(), unavailable.end(), [](int u) { return u; })) {
    rep.available = false;
    rep.note = "portion leaves fewer than 2 training subjects in a class";
    return rep;
  }
  rep.folds = std::move(records);
  std::vector<double> a, f, p;
  for (std::size_t k = 0; k < rep.folds.size(); k += 2) rep.total_retries += rep.folds[k].retries;
  for (const auto& r : rep.folds) {
    a.push_back(r.auroc);
    f.push_back(r.f1);
    p.push_back(r.prauc);
  }
  rep.auroc = summarize(a);
  rep.f1 = summarize(f);
  rep.prauc = summarize(p);
  return rep;
}

inline std::vector<ProbeReport> label_portion_sweep(const ProbeInput& in, RegimeName reg, Endpoint ep,
                                                    const std::vector<double>& portions, ProtocolOptions opt = {}) {
  std::vector<ProbeReport> out;
  for (double p : portions) {
    opt.portion = p;
    out.push_back(run_protocol(in, reg, ep, opt));
  }
  return out;
}

// Pooled test-side predictions of every fold, for subgroup tables.
inline std::vector<metrics::Prediction> pooled_predictions(const ProbeReport& rep, const ProbeInput& in) {
  std::vector<metrics::Prediction> out;
  for (const auto& r : rep.folds)
    for (std::size_t k = 0; k < r.test_idx.size(); ++k)
      out.push_back({in.subjects[r.test_idx[k]], r.test_scores[k], in.labels[r.test_idx[k]]});
  return out;
}

inline void write_report_csv(std::ostream& os, const ProbeReport& rep) {
  os << "encoder,endpoint,regime,portion,row,seed,fold,auroc,f1,prauc,best_C,n_train,n_test,retries\n";
  char buf[256];
  const std::string head = rep.encoder + "," + std::string(to_string(rep.endpoint)) + "," +
                           std::string(to_string(rep.regime)) + ",";
  std::snprintf(buf, sizeof buf, "%.2f", rep.portion);
  const std::string portion = buf;
  if (!rep.available) {
    os << head << portion << ",unavailable,,,,,,,,,\n";
    return;
  }
  for (const auto& r : rep.folds) {
    std::snprintf(buf, sizeof buf, "fold,%d,%d,%.6f,%.6f,%.6f,%g,%d,%d,%d", r.seed, r.fold, r.auroc, r.f1, r.prauc,
                  r.best_C, r.n_train, r.n_test, r.retries);
    os << head << portion << "," << buf << "\n";
  }
  std::snprintf(buf, sizeof buf, "mean,,,%.6f,%.6f,%.6f,,,,%d", rep.auroc.mean, rep.f1.mean, rep.prauc.mean,
                rep.total_retries);
  os << head << portion << "," << buf << "\n";
  std::snprintf(buf, sizeof buf, "std,,,%.6f,%.6f,%.6f,,,,", rep.auroc.std, rep.f1.std, rep.prauc.std);
  os << head << portion << "," << buf << "\n";
}

}  // namespace cgmjepa::probe
