#pragma once

// Glucose series ingestion, OGTT grid alignment, derived mean streams,
// cohort split files and seeded synthetic cohorts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgmjepa/common.hpp"
#include "cgmjepa/rng.hpp"

namespace cgmjepa {

enum class Stream {
  ctru_venous,
  ctru_cgm,
  home_cgm_1,
  home_cgm_2,
  cgm_home_mean,
  cgm_all_mean,
  free_living,
};

inline constexpr std::array<Stream, 7> kAllStreams = {
    Stream::ctru_venous,   Stream::ctru_cgm,     Stream::home_cgm_1,  Stream::home_cgm_2,
    Stream::cgm_home_mean, Stream::cgm_all_mean, Stream::free_living,
};

inline std::string_view to_string(Stream s) {
  switch (s) {
    case Stream::ctru_venous: return "ctru_venous";
    case Stream::ctru_cgm: return "ctru_cgm";
    case Stream::home_cgm_1: return "home_cgm_1";
    case Stream::home_cgm_2: return "home_cgm_2";
    case Stream::cgm_home_mean: return "cgm_home_mean";
    case Stream::cgm_all_mean: return "cgm_all_mean";
    case Stream::free_living: return "free_living";
  }
  return "?";
}

inline std::optional<Stream> parse_stream(std::string_view name) {
  for (Stream s : kAllStreams)
    if (to_string(s) == name) return s;
  return std::nullopt;
}

struct Sample {
  double t = 0.0;        // minutes
  double glucose = 0.0;  // mg/dL
};

struct GlucoseSeries {
  std::string subject_id;
  Stream stream = Stream::free_living;
  std::vector<Sample> samples;  // strictly increasing t
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    auto b = f.find_first_not_of(" \t");
    auto e = f.find_last_not_of(" \t");
    f = (b == std::string::npos) ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

}  // namespace detail

inline constexpr double kSentinel = -1.0;

// Header: subject_id,stream,timepoint_min,glucose_mg_dl (any column order).
// Rows with glucose == -1 are missing-value markers and are skipped.
inline std::vector<GlucoseSeries> parse_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty file, header required", 1);
  ++lineno;
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  const auto header = detail::split_csv_line(line);
  auto col = [&](std::string_view name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ParseError("missing header column '" + std::string(name) + "'", 1);
  };
  const std::size_t c_sub = col("subject_id"), c_str = col("stream"), c_t = col("timepoint_min"),
                    c_g = col("glucose_mg_dl");
  const std::size_t ncol = header.size();

  std::map<std::pair<std::string, Stream>, std::map<double, double>> groups;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != ncol)
      throw ParseError("expected " + std::to_string(ncol) + " fields, got " + std::to_string(f.size()),
                       lineno);
    if (f[c_sub].empty()) throw ParseError("empty subject_id", lineno);
    auto stream = parse_stream(f[c_str]);
    if (!stream) throw ParseError("unknown stream '" + f[c_str] + "'", lineno);
    double t = 0, g = 0;
    if (!detail::parse_double(f[c_t], t) || !std::isfinite(t))
      throw ParseError("non-numeric timepoint '" + f[c_t] + "'", lineno);
    if (!detail::parse_double(f[c_g], g) || !std::isfinite(g))
      throw ParseError("non-numeric glucose '" + f[c_g] + "'", lineno);
    if (g == kSentinel) continue;
    if (g <= 0) throw ParseError("glucose must be positive", lineno);
    auto& slot = groups[{f[c_sub], *stream}];
    if (!slot.emplace(t, g).second)
      throw ValidationError("line " + std::to_string(lineno) + ": duplicate observation for (" +
                            f[c_sub] + ", " + f[c_str] + ", t=" + f[c_t] + ")");
  }

  std::vector<GlucoseSeries> out;
  out.reserve(groups.size());
  for (auto& [key, obs] : groups) {
    GlucoseSeries s{key.first, key.second, {}};
    s.samples.reserve(obs.size());
    for (auto [t, g] : obs) s.samples.push_back({t, g});
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<GlucoseSeries> parse_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_csv(in);
}

inline void write_csv(std::ostream& os, const std::vector<GlucoseSeries>& series) {
  os << "subject_id,stream,timepoint_min,glucose_mg_dl\n";
  char buf[64];
  for (const auto& s : series) {
    for (const auto& smp : s.samples) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", smp.t, smp.glucose);
      os << s.subject_id << ',' << to_string(s.stream) << ',' << buf << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// OGTT grid

inline constexpr int kGridSlots = 39;
inline constexpr double kGridStartMin = -10.0;
inline constexpr double kGridStepMin = 5.0;

inline constexpr double grid_time(int slot) { return kGridStartMin + kGridStepMin * slot; }

struct AlignedTrace {
  std::string subject_id;
  Stream stream = Stream::ctru_venous;
  std::array<double, kGridSlots> values{};
  std::array<bool, kGridSlots> mask{};  // true = real observation
  bool smoothed = false;

  int observed() const { return static_cast<int>(std::count(mask.begin(), mask.end(), true)); }
};

struct AlignResult {
  AlignedTrace trace;
  std::size_t dropped = 0;  // observations not on an exact grid timepoint
};

// Exact-timepoint placement; neighboring timepoints are never rounded onto the grid.
inline AlignResult align_to_grid(const GlucoseSeries& series) {
  AlignResult r;
  r.trace.subject_id = series.subject_id;
  r.trace.stream = series.stream;
  r.trace.values.fill(kSentinel);
  r.trace.mask.fill(false);
  for (const auto& s : series.samples) {
    const double k = (s.t - kGridStartMin) / kGridStepMin;
    const double kr = std::round(k);
    if (k != kr || kr < 0 || kr >= kGridSlots || grid_time(static_cast<int>(kr)) != s.t) {
      ++r.dropped;
      continue;
    }
    const int slot = static_cast<int>(kr);
    r.trace.values[slot] = s.glucose;
    r.trace.mask[slot] = true;
  }
  return r;
}

inline GlucoseSeries to_series(const AlignedTrace& trace) {
  GlucoseSeries s{trace.subject_id, trace.stream, {}};
  for (int i = 0; i < kGridSlots; ++i)
    if (trace.mask[i]) s.samples.push_back({grid_time(i), trace.values[i]});
  return s;
}

// Pointwise mean over the components observed at each slot; unobserved
// components are omitted rather than imputed.
inline AlignedTrace mean_stream(const std::vector<AlignedTrace>& components, Stream target) {
  if (components.empty()) throw ValidationError("mean_stream: empty component list");
  AlignedTrace out;
  out.subject_id = components.front().subject_id;
  out.stream = target;
  for (const auto& c : components)
    if (c.subject_id != out.subject_id)
      throw ValidationError("mean_stream: components from different subjects");
  for (int i = 0; i < kGridSlots; ++i) {
    double sum = 0;
    int n = 0;
    for (const auto& c : components) {
      if (c.mask[i]) {
        sum += c.values[i];
        ++n;
      }
    }
    out.mask[i] = n > 0;
    out.values[i] = n > 0 ? sum / n : kSentinel;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cohort split files

enum class SplitName { initial, validation };

struct Labels {
  int ir = 0;
  int beta = 0;
};

struct Demographics {
  std::optional<std::string> sex, age_band, bmi_band, ethnicity;
};

struct CohortSplit {
  SplitName name = SplitName::initial;
  std::vector<std::string> subjects;
  std::map<std::string, Labels> labels;
  std::map<std::string, Demographics> demographics;
};

inline std::string_view to_string(SplitName n) {
  return n == SplitName::initial ? "initial" : "validation";
}

inline CohortSplit parse_split(const nlohmann::json& j) {
  CohortSplit s;
  if (!j.is_object()) throw ValidationError("split: top level must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k != "name" && k != "subjects" && k != "labels" && k != "demographics")
      throw ValidationError("split: unknown key '" + k + "'");
  }
  if (j.contains("name")) {
    const auto n = j.at("name").get<std::string>();
    if (n == "initial") s.name = SplitName::initial;
    else if (n == "validation") s.name = SplitName::validation;
    else throw ValidationError("split: unknown split name '" + n + "'");
  }
  if (!j.contains("subjects") || !j.at("subjects").is_array())
    throw ValidationError("split: 'subjects' array required");
  s.subjects = j.at("subjects").get<std::vector<std::string>>();
  if (s.subjects.empty()) throw ValidationError("split: empty subjects list");
  std::set<std::string> seen;
  for (const auto& id : s.subjects)
    if (!seen.insert(id).second) throw ValidationError("split: duplicate subject '" + id + "'");

  const auto& labels = j.contains("labels") ? j.at("labels") : nlohmann::json::object();
  for (const auto& [id, lab] : labels.items()) {
    if (!seen.count(id)) throw ValidationError("split: label for unlisted subject '" + id + "'");
    Labels l;
    bool has_ir = false, has_beta = false;
    for (const auto& [key, val] : lab.items()) {
      if (!val.is_number_integer() || (val.get<int>() != 0 && val.get<int>() != 1))
        throw ValidationError("split: label '" + key + "' of '" + id + "' must be 0 or 1");
      if (key == "ir") {
        l.ir = val.get<int>();
        has_ir = true;
      } else if (key == "beta") {
        l.beta = val.get<int>();
        has_beta = true;
      } else {
        throw ValidationError("split: unknown label key '" + key + "' for '" + id + "'");
      }
    }
    if (!has_ir || !has_beta) throw ValidationError("split: subject '" + id + "' missing a label");
    s.labels[id] = l;
  }
  for (const auto& id : s.subjects)
    if (!s.labels.count(id)) throw ValidationError("split: subject '" + id + "' has no labels");

  if (j.contains("demographics")) {
    for (const auto& [id, d] : j.at("demographics").items()) {
      if (!seen.count(id))
        throw ValidationError("split: demographics for unlisted subject '" + id + "'");
      Demographics dm;
      auto get = [&](const char* key) -> std::optional<std::string> {
        if (d.contains(key) && d.at(key).is_string()) return d.at(key).get<std::string>();
        return std::nullopt;
      };
      dm.sex = get("sex");
      dm.age_band = get("age_band");
      dm.bmi_band = get("bmi_band");
      dm.ethnicity = get("ethnicity");
      s.demographics[id] = dm;
    }
  }
  return s;
}

inline CohortSplit load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("split: malformed JSON: ") + e.what());
  }
  return parse_split(j);
}

inline nlohmann::json to_json(const CohortSplit& s) {
  nlohmann::json j;
  j["name"] = std::string(to_string(s.name));
  j["subjects"] = s.subjects;
  nlohmann::json labels = nlohmann::json::object();
  for (const auto& [id, l] : s.labels) labels[id] = {{"ir", l.ir}, {"beta", l.beta}};
  j["labels"] = labels;
  nlohmann::json demo = nlohmann::json::object();
  for (const auto& [id, d] : s.demographics) {
    nlohmann::json e = nlohmann::json::object();
    if (d.sex) e["sex"] = *d.sex;
    if (d.age_band) e["age_band"] = *d.age_band;
    if (d.bmi_band) e["bmi_band"] = *d.bmi_band;
    if (d.ethnicity) e["ethnicity"] = *d.ethnicity;
    demo[id] = e;
  }
  j["demographics"] = demo;
  return j;
}

inline void check_disjoint(const CohortSplit& a, const CohortSplit& b) {
  std::set<std::string> sa(a.subjects.begin(), a.subjects.end());
  for (const auto& id : b.subjects)
    if (sa.count(id))
      throw ValidationError("splits not disjoint: subject '" + id + "' appears in both");
}

// ---------------------------------------------------------------------------
// Synthetic cohorts
//
// Each subject belongs to one of two latent classes with distinct post-load
// kinetics. The excursion above fasting baseline is a gamma-variate bump
//   e(t) = A * (t/tp)^k * exp(k * (1 - t/tp)),  t >= 0,
// which peaks at t = tp with height A; larger k clears faster.

struct SynthSpec {
  int n_subjects = 40;
  double class_balance = 0.5;
  int days_per_subject = 4;
  double noise_sd = 4.0;
  std::uint64_t seed = 43;
};

struct ClassKinetics {
  double peak_min;
  double peak_height;
  double shape_k;
};

inline constexpr ClassKinetics kClass0{45.0, 70.0, 3.0};  // fast clearance
inline constexpr ClassKinetics kClass1{75.0, 95.0, 1.5};  // slow clearance

// P(label = 1 | class)
inline constexpr double kIrGivenClass[2] = {0.05, 0.95};
inline constexpr double kBetaGivenClass[2] = {0.20, 0.80};

inline constexpr double kCgmLagMin = 8.0;
inline constexpr double kMinGlucose = 40.0;

struct SynthCohort {
  std::vector<GlucoseSeries> series;
  CohortSplit split;
  std::map<std::string, int> latent_class;
};

inline double excursion(double t_min, double height, double peak_min, double k) {
  if (t_min <= 0) return 0.0;
  const double r = t_min / peak_min;
  return height * std::pow(r, k) * std::exp(k * (1.0 - r));
}

inline SynthCohort generate_synthetic(const SynthSpec& spec) {
  if (spec.n_subjects < 2) throw ValidationError("synth: n_subjects must be >= 2");
  if (!(spec.class_balance > 0 && spec.class_balance < 1))
    throw ValidationError("synth: class_balance must be in (0,1)");
  if (spec.days_per_subject < 0) throw ValidationError("synth: days_per_subject must be >= 0");
  if (spec.noise_sd < 0) throw ValidationError("synth: noise_sd must be >= 0");

  SplitMix64 rng(spec.seed);
  const int n = spec.n_subjects;
  const int n1 = static_cast<int>(std::floor(spec.class_balance * n + 0.5));
  std::vector<int> cls(n, 0);
  for (int i = 0; i < n1; ++i) cls[i] = 1;
  rng.shuffle(cls);

  static const char* kSex[] = {"F", "M"};
  static const char* kAge[] = {"30-39", "40-49", "50-59", "60-69"};
  static const char* kBmi[] = {"18.5-24.9", "25-29.9", "30+"};
  static const char* kEth[] = {"Asian", "Caucasian", "Hispanic", "Other"};

  SynthCohort out;
  out.split.name = SplitName::validation;
  const double sd = spec.noise_sd;

  for (int i = 0; i < n; ++i) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "S%03d", i + 1);
    const std::string id = idbuf;
    const int c = cls[i];
    const ClassKinetics& kin = c ? kClass1 : kClass0;

    // Subject-level parameters, fixed draw order.
    const double baseline = rng.uniform(80.0, 100.0);
    const double tp = std::max(20.0, kin.peak_min + rng.normal(0.0, 6.0));
    const double height = std::max(20.0, kin.peak_height + rng.normal(0.0, 10.0));
    const double shape_k = std::max(0.8, kin.shape_k + rng.normal(0.0, 0.2));
    const Labels lab{rng.uniform() < kIrGivenClass[c] ? 1 : 0,
                     rng.uniform() < kBetaGivenClass[c] ? 1 : 0};
    Demographics demo;
    demo.sex = kSex[rng.below(2)];
    demo.age_band = kAge[rng.below(4)];
    demo.bmi_band = kBmi[rng.below(3)];
    demo.ethnicity = kEth[rng.below(4)];
    const bool missing_home2 = rng.uniform() < 0.05;

    auto ogtt = [&](double t, double h_scale, double lag) {
      return baseline + excursion(t - lag, height * h_scale, tp, shape_k);
    };
    auto noisy = [&](double v) { return std::max(kMinGlucose, v + (sd > 0 ? rng.normal(0.0, sd) : 0.0)); };

    {
      GlucoseSeries s{id, Stream::ctru_venous, {}};
      for (double t : {-10.0, 0.0, 15.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0})
        s.samples.push_back({t, noisy(ogtt(t, 1.0, 0.0))});
      out.series.push_back(std::move(s));
    }
    auto cgm_session = [&](Stream stream, double h_scale) {
      GlucoseSeries s{id, stream, {}};
      for (int k = 0; k < kGridSlots; ++k) {
        const double t = grid_time(k);
        const double v = noisy(ogtt(t, h_scale, kCgmLagMin));
        if (rng.uniform() < 0.03) continue;  // sensor dropout
        s.samples.push_back({t, v});
      }
      return s;
    };
    out.series.push_back(cgm_session(Stream::ctru_cgm, 1.0));
    out.series.push_back(cgm_session(Stream::home_cgm_1, rng.uniform(0.9, 1.1)));
    {
      auto s2 = cgm_session(Stream::home_cgm_2, rng.uniform(0.9, 1.1));
      if (!missing_home2) out.series.push_back(std::move(s2));
    }

    if (spec.days_per_subject > 0) {
      GlucoseSeries s{id, Stream::free_living, {}};
      const int total = 288 * spec.days_per_subject;
      s.samples.reserve(total);
      std::vector<std::pair<double, double>> meals;  // (onset minute, height scale)
      for (int d = 0; d < spec.days_per_subject; ++d) {
        for (double h : {7.5, 12.5, 19.0}) {
          const double onset = 1440.0 * d + 60.0 * (h + rng.uniform(-0.5, 0.5));
          meals.emplace_back(onset, rng.uniform(0.5, 1.0));
        }
      }
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (int k = 0; k < total; ++k) {
        const double t = 5.0 * k;
        double v = baseline + 8.0 * std::sin(2.0 * std::numbers::pi * t / 1440.0 + phase);
        for (auto [onset, scale] : meals) v += excursion(t - onset, height * scale, tp, shape_k);
        s.samples.push_back({t, noisy(v)});
      }
      out.series.push_back(std::move(s));
    }

    out.split.subjects.push_back(id);
    out.split.labels[id] = lab;
    out.split.demographics[id] = demo;
    out.latent_class[id] = c;
  }
  return out;
}

}  // namespace cgmjepa
