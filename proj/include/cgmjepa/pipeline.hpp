#pragma once

// Glue shared by the CLI, the acceptance suite and the demo: pretraining corpus
// assembly, all-cell probing, the ablation sweeps and their summary tables.

#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "cgmjepa/data.hpp"
#include "cgmjepa/glucodensity.hpp"
#include "cgmjepa/jepa.hpp"
#include "cgmjepa/metrics.hpp"
#include "cgmjepa/probe.hpp"
#include "cgmjepa/views.hpp"

namespace cgmjepa::pipeline {

using Log = std::function<void(const std::string&)>;

// Free-living streams only; the OGTT streams are reserved for evaluation.
inline std::vector<DayWindow> pretrain_windows(const std::vector<GlucoseSeries>& series, int stride = kWindowLength) {
  std::vector<DayWindow> out;
  for (const auto& s : series) {
    if (s.stream != Stream::free_living) continue;
    auto w = window_days(s, stride);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

// gd points into the cache, which must outlive the examples. Windows without a
// cache entry get gd = nullptr (train() rejects that in cross mode).
inline std::vector<TrainExample<float>> make_examples(const std::vector<DayWindow>& windows, const GdCache* cache) {
  std::vector<TrainExample<float>> out;
  out.reserve(windows.size());
  for (const auto& w : windows)
    out.push_back({tokens_matrix<float>(tokenize(w)), cache ? cache->find(w.subject_id, w.split_idx) : nullptr,
                   w.subject_id, w.split_idx});
  return out;
}

inline std::string encoder_name(Mode m) { return m == Mode::vanilla ? "cgm_jepa" : "x_cgm_jepa"; }

struct Trained {
  ModelState<float> state;
  std::vector<EpochRecord> history;
};

inline Trained pretrain(const std::vector<TrainExample<float>>& examples, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  Trained t{make_model<float>(mcfg, tcfg.mode, tcfg.seed), {}};
  t.history = train(t.state, examples, tcfg, on_epoch);
  return t;
}

// Every regime x endpoint cell for one feature table.
inline std::vector<probe::ProbeReport> probe_all(const probe::EmbeddingTable& emb, const CohortSplit& split,
                                                 const std::string& encoder, const probe::ProtocolOptions& opt) {
  std::vector<probe::ProbeReport> out;
  for (auto ep : {probe::Endpoint::ir, probe::Endpoint::beta})
    for (auto reg : probe::kAllRegimes) {
      const auto in = probe::make_input(emb, split, probe::regime(reg), ep);
      auto rep = probe::run_protocol(in, reg, ep, opt);
      rep.encoder = encoder;
      out.push_back(std::move(rep));
    }
  return out;
}

// Mean / population std of fold AUROCs pooled over every available report.
inline probe::MetricSummary pooled_auroc(const std::vector<const probe::ProbeReport*>& reps) {
  std::vector<double> a;
  for (const auto* r : reps)
    if (r->available)
      for (const auto& f : r->folds) a.push_back(f.auroc);
  if (a.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  return probe::summarize(a);
}

inline probe::MetricSummary pooled_auroc(const std::vector<probe::ProbeReport>& reps) {
  std::vector<const probe::ProbeReport*> p;
  for (const auto& r : reps) p.push_back(&r);
  return pooled_auroc(p);
}

// ---------------------------------------------------------------------------
// Ablation sweeps

struct AblationPlan {
  std::vector<double> mask_ratios{0.25, 0.5, 0.75};
  std::vector<double> lambdas{0.1, 0.5, 1.0};
  std::vector<double> portions{0.25, 0.5, 0.75};
  ModelConfig model;
  TrainConfig train;  // mode, mask_ratio and lambda are overridden per run
  probe::ProtocolOptions protocol;
};

struct SweepRow {
  double setting = 0;
  std::map<std::string, probe::MetricSummary> auroc;  // encoder -> pooled AUROC
};

struct AblationResult {
  std::vector<SweepRow> mask, lambda, portion;
  int trainings = 0;
};

inline AblationResult run_ablation(const AblationPlan& plan, const std::vector<TrainExample<float>>& examples,
                                   const probe::TraceTable& traces, const CohortSplit& split, const Log& log = {}) {
  using Key = std::tuple<int, double, double>;
  std::map<Key, std::vector<probe::ProbeReport>> reports;
  std::map<Key, probe::EmbeddingTable> embeddings;
  AblationResult res;

  auto model = [&](Mode m, double ratio, double lambda) -> const Key {
    const Key k{static_cast<int>(m), ratio, m == Mode::vanilla ? 0.0 : lambda};
    if (embeddings.count(k)) return k;
    TrainConfig tc = plan.train;
    tc.mode = m;
    tc.mask_ratio = ratio;
    tc.lambda = m == Mode::vanilla ? 0.0 : lambda;
    if (log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "ablate: %s mask %.2f lambda %.2f (%d epochs)", encoder_name(m).c_str(), ratio,
                    tc.lambda, tc.epochs);
      log(buf);
    }
    const Trained t = pretrain(examples, plan.model, tc);
    embeddings[k] = probe::embed_all(t.state, traces);
    reports[k] = probe_all(embeddings[k], split, encoder_name(m), plan.protocol);
    ++res.trainings;
    return k;
  };

  const double base_lambda = plan.train.lambda, base_ratio = plan.train.mask_ratio;
  for (double r : plan.mask_ratios) {
    SweepRow row{r, {}};
    for (Mode m : {Mode::vanilla, Mode::cross})
      row.auroc[encoder_name(m)] = pooled_auroc(reports[model(m, r, base_lambda)]);
    res.mask.push_back(row);
  }
  for (double l : plan.lambdas) {
    std::vector<const probe::ProbeReport*> pooled;
    for (double r : plan.mask_ratios)
      for (const auto& rep : reports[model(Mode::cross, r, l)]) pooled.push_back(&rep);
    res.lambda.push_back({l, {{encoder_name(Mode::cross), pooled_auroc(pooled)}}});
  }
  for (double p : plan.portions) {
    SweepRow row{p, {}};
    for (Mode m : {Mode::vanilla, Mode::cross}) {
      const Key k = model(m, base_ratio, base_lambda);
      probe::ProtocolOptions opt = plan.protocol;
      opt.portion = p;
      row.auroc[encoder_name(m)] = pooled_auroc(probe_all(embeddings[k], split, encoder_name(m), opt));
    }
    res.portion.push_back(row);
  }
  return res;
}

// setting,<enc>_auroc_mean,<enc>_auroc_std,... with encoders in a fixed order.
inline void write_sweep_table(std::ostream& os, const std::string& setting, const std::vector<SweepRow>& rows) {
  std::vector<std::string> encoders;
  for (const auto& name : {encoder_name(Mode::vanilla), encoder_name(Mode::cross)})
    if (!rows.empty() && rows.front().auroc.count(name)) encoders.push_back(name);
  os << setting;
  for (const auto& e : encoders) os << "," << e << "_auroc_mean," << e << "_auroc_std";
  os << "\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.2f", r.setting);
    os << buf;
    for (const auto& e : encoders) {
      const auto& s = r.auroc.at(e);
      std::snprintf(buf, sizeof buf, ",%.4f,%.4f", s.mean, s.std);
      os << buf;
    }
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// Analysis tables

inline void write_divergence_csv(std::ostream& os, const std::string& encoder, const std::string& endpoint,
                                 const std::string& stream, const metrics::DivergenceProfile& d) {
  os << "encoder,endpoint,stream,patch,cosine_distance,undefined\n";
  char buf[64];
  for (std::size_t p = 0; p < d.distance.size(); ++p) {
    if (d.undefined[p]) std::snprintf(buf, sizeof buf, "P%zu,,1", p + 1);
    else std::snprintf(buf, sizeof buf, "P%zu,%.6f,0", p + 1, d.distance[p]);
    os << encoder << "," << endpoint << "," << stream << "," << buf << "\n";
  }
}

inline void write_subgroup_csv(std::ostream& os, const std::string& encoder, const metrics::SubgroupReport& r) {
  os << "encoder,field,level,n_subjects,auroc,available\n";
  char buf[64];
  for (const auto& row : r.rows) {
    if (row.available) std::snprintf(buf, sizeof buf, "%d,%.4f,1", row.n_subjects, row.auroc);
    else std::snprintf(buf, sizeof buf, "%d,,0", row.n_subjects);
    os << encoder << "," << row.field << "," << row.level << "," << buf << "\n";
  }
  for (const auto& [field, gap] : r.gap) {
    std::snprintf(buf, sizeof buf, "%.4f", gap);
    os << encoder << "," << field << ",gap,," << buf << ",\n";
  }
  if (!r.note.empty()) os << "# " << r.note << "\n";
}

inline void write_geometry_header(std::ostream& os) {
  os << "encoder,endpoint,stream,assignment,silhouette,calinski_harabasz,davies_bouldin,bw_ratio,intra,inter,"
        "ari,nmi\n";
}

inline void write_geometry_row(std::ostream& os, const std::string& encoder, const std::string& endpoint,
                               const std::string& stream, const std::string& assignment, const metrics::Geometry& g,
                               double ari, double nmi) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", g.silhouette, g.ch, g.db, g.bw_ratio,
                g.intra, g.inter, ari, nmi);
  os << encoder << "," << endpoint << "," << stream << "," << assignment << "," << buf << "\n";
}

}  // namespace cgmjepa::pipeline
