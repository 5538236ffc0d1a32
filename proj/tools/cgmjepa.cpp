// cgmjepa: synthetic data, Glucodensity precompute, pretraining, embedding,
// probing, analysis tables and ablation sweeps.
//
// Every command reads an optional JSON run config (--config); flags override
// config keys. Each output directory receives run.json with the resolved
// config, input fingerprints and the tool version.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cgmjepa/data.hpp"
#include "cgmjepa/glucodensity.hpp"
#include "cgmjepa/jepa.hpp"
#include "cgmjepa/metrics.hpp"
#include "cgmjepa/pipeline.hpp"
#include "cgmjepa/probe.hpp"

using namespace cgmjepa;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int default_workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

json default_config() {
  json regimes = json::array();
  for (auto r : probe::kAllRegimes) regimes.push_back(std::string(probe::to_string(r)));
  const pipeline::AblationPlan plan;
  return {
      {"data", "data"},
      {"cache", ""},
      {"out", "out"},
      {"workers", default_workers()},
      {"gd_workers", 8},
      {"synth",
       {{"n_subjects", 40}, {"class_balance", 0.5}, {"days_per_subject", 4}, {"noise_sd", 4.0}, {"seed", 43}}},
      {"model", to_json(ModelConfig{})},
      {"train", to_json(TrainConfig{})},
      {"probe",
       {{"seeds", 20},
        {"base_seed", 0},
        {"c_grid", probe::default_c_grid()},
        {"regimes", regimes},
        {"endpoints", {"ir", "beta"}},
        {"portion", 1.0}}},
      {"ablation",
       {{"mask_ratios", plan.mask_ratios}, {"lambdas", plan.lambdas}, {"portions", plan.portions}, {"epochs", 100}}},
  };
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  binio::write_atomically(p.string(), [&](std::ostream& os) { os << text; });
}

template <class F>
void write_with(const fs::path& p, F&& body) {
  std::ostringstream os;
  body(os);
  write_text(p, os.str());
}

// Resolved config plus the data-dependent paths every command needs.
struct Run {
  json cfg = default_config();
  json inputs = json::object();  // name -> fingerprint

  fs::path data() const { return cfg["data"].get<std::string>(); }
  fs::path out() const { return cfg["out"].get<std::string>(); }
  fs::path cache() const {
    const auto c = cfg["cache"].get<std::string>();
    return c.empty() ? data() / "glucodensity.gdc" : fs::path(c);
  }
  int workers() const { return cfg["workers"].get<int>(); }

  void fingerprint(const std::string& name, const fs::path& p) { inputs[name] = file_fingerprint(p.string()); }

  void echo(const std::string& command) const {
    fs::create_directories(out());
    json j{{"command", command}, {"version", kVersion}, {"config", cfg}, {"inputs", inputs}};
    write_text(out() / "run.json", j.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------------------
// Upstream artifacts

fs::path require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw Error("missing " + p.string() + "; produce it with `cgmjepa " + producer + "`");
  return p;
}

struct Dataset {
  std::vector<GlucoseSeries> series;
  CohortSplit split;
};

Dataset load_data(Run& run) {
  const auto series = require(run.data() / "series.csv", "synth --out " + run.data().string());
  const auto split = require(run.data() / "split.json", "synth --out " + run.data().string());
  run.fingerprint("series.csv", series);
  run.fingerprint("split.json", split);
  return {parse_csv(series.string()), load_split(split.string())};
}

GdCache load_cache(Run& run) {
  const auto path = require(run.cache(), "precompute-gd --data " + run.data().string());
  run.fingerprint("glucodensity_cache", path);
  return GdCache::open(path.string());
}

Checkpoint load_model(Run& run, const std::string& path) {
  require(path, "pretrain --out DIR");
  run.fingerprint("checkpoint", path);
  return load_checkpoint(path);
}

// ---------------------------------------------------------------------------
// Small emitters

void write_loss_history(std::ostream& os, const std::vector<EpochRecord>& h) {
  os << "epoch,l_cgm,l_gd,l_total,lr,grad_norm\n";
  char buf[160];
  for (const auto& e : h) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.6g,%.6g\n", e.epoch, e.l_cgm, e.l_gd, e.l_total, e.lr,
                  e.grad_norm);
    os << buf;
  }
}

// Static loss curve: L_total, L_CGM and L_GD per epoch.
void write_loss_svg(std::ostream& os, const std::vector<EpochRecord>& h) {
  const double W = 640, H = 360, pad = 40;
  double hi = 0;
  for (const auto& e : h) hi = std::max({hi, e.l_total, e.l_cgm, e.l_gd});
  if (hi <= 0) hi = 1;
  const double n = std::max<double>(1.0, static_cast<double>(h.size()) - 1);
  auto line = [&](auto get, const char* color) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    char buf[64];
    for (std::size_t i = 0; i < h.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", pad + (W - 2 * pad) * static_cast<double>(i) / n,
                    H - pad - (H - 2 * pad) * get(h[i]) / hi);
      os << buf;
    }
    os << "\"/>\n";
  };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad << "\" y2=\"" << H - pad
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << H - pad
     << "\" stroke=\"black\"/>\n";
  line([](const EpochRecord& e) { return e.l_total; }, "black");
  line([](const EpochRecord& e) { return e.l_cgm; }, "steelblue");
  line([](const EpochRecord& e) { return e.l_gd; }, "darkorange");
  os << "<text x=\"" << pad << "\" y=\"20\" font-size=\"12\">loss per epoch (black total, blue CGM, orange GD)</text>\n";
  os << "</svg>\n";
}

void write_predictions(std::ostream& os, const probe::ProbeReport& rep, const probe::ProbeInput& in) {
  os << "subject_id,score,label,seed,fold\n";
  char buf[96];
  for (const auto& f : rep.folds)
    for (std::size_t k = 0; k < f.test_idx.size(); ++k) {
      std::snprintf(buf, sizeof buf, ",%.9g,%d,%d,%d\n", f.test_scores[k], in.labels[f.test_idx[k]], f.seed, f.fold);
      os << in.subjects[f.test_idx[k]] << buf;
    }
}

std::vector<metrics::Prediction> read_predictions(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::string line;
  std::size_t lineno = 1;
  std::getline(is, line);
  if (line.rfind("subject_id,score,label", 0) != 0) throw ParseError(p.string() + ": not a predictions file", 1);
  std::vector<metrics::Prediction> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() < 3) throw ParseError(p.string() + ": short row", lineno);
    metrics::Prediction pr;
    pr.subject_id = f[0];
    if (!detail::parse_double(f[1], pr.score)) throw ParseError(p.string() + ": bad score", lineno);
    pr.label = f[2] == "1" ? 1 : 0;
    out.push_back(pr);
  }
  return out;
}

probe::ProtocolOptions protocol_options(const Run& run) {
  const auto& p = run.cfg["probe"];
  probe::ProtocolOptions opt;
  opt.seeds = p["seeds"];
  opt.base_seed = p["base_seed"];
  opt.c_grid = p["c_grid"].get<std::vector<double>>();
  opt.portion = p["portion"];
  opt.workers = run.workers();
  return opt;
}

std::vector<probe::RegimeName> regimes(const Run& run) {
  std::vector<probe::RegimeName> out;
  for (const auto& r : run.cfg["probe"]["regimes"]) out.push_back(probe::parse_regime(r.get<std::string>()));
  return out;
}

std::vector<probe::Endpoint> endpoints(const Run& run) {
  std::vector<probe::Endpoint> out;
  for (const auto& e : run.cfg["probe"]["endpoints"]) out.push_back(probe::parse_endpoint(e.get<std::string>()));
  return out;
}

TrainConfig train_config(const Run& run) {
  TrainConfig tc = train_config_from_json(run.cfg["train"]);
  tc.workers = run.workers();
  tc.validate();
  return tc;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(Run& run) {
  const auto& s = run.cfg["synth"];
  SynthSpec spec{s["n_subjects"], s["class_balance"], s["days_per_subject"], s["noise_sd"], s["seed"]};
  const auto coh = generate_synthetic(spec);
  fs::create_directories(run.out());
  write_with(run.out() / "series.csv", [&](std::ostream& os) { write_csv(os, coh.series); });
  write_text(run.out() / "split.json", to_json(coh.split).dump(2) + "\n");
  write_with(run.out() / "latent_class.csv", [&](std::ostream& os) {
    os << "subject_id,class\n";
    for (const auto& [id, c] : coh.latent_class) os << id << "," << c << "\n";
  });
  run.echo("synth");
  std::cout << "synth: " << coh.split.subjects.size() << " subjects, " << coh.series.size() << " series -> "
            << run.out().string() << "\n";
  return 0;
}

int cmd_precompute_gd(Run& run) {
  const auto data = load_data(run);
  const int stride = run.cfg["train"]["stride"];
  const auto windows = pipeline::pretrain_windows(data.series, stride);
  GdCache cache = GdCache::open(run.cache().string());
  const auto st = precompute_cache(windows, cache, run.cfg["gd_workers"].get<int>());
  std::cout << "precompute-gd: " << st.computed << " computed, " << st.reused << " reused, " << cache.size()
            << " entries -> " << run.cache().string() << "\n";
  return 0;
}

int cmd_pretrain(Run& run) {
  const auto data = load_data(run);
  const TrainConfig tc = train_config(run);
  const ModelConfig mc = model_config_from_json(run.cfg["model"]);
  mc.validate();
  const auto windows = pipeline::pretrain_windows(data.series, tc.stride);
  std::optional<GdCache> cache;
  if (tc.mode == Mode::cross) cache = load_cache(run);
  const auto examples = pipeline::make_examples(windows, cache ? &*cache : nullptr);
  std::cout << "pretrain: " << pipeline::encoder_name(tc.mode) << ", " << examples.size() << " windows, "
            << tc.epochs << " epochs, " << planned_total_steps(tc, examples.size()) << " planned steps\n";
  const auto t = pipeline::pretrain(examples, mc, tc, [](const EpochRecord& e) {
    if (e.epoch == 1 || e.epoch % 10 == 0)
      std::printf("  epoch %3d  L_total %.5f  L_CGM %.5f  L_GD %.5f  lr %.3g\n", e.epoch, e.l_total, e.l_cgm, e.l_gd,
                  e.lr);
    std::fflush(stdout);
  });
  run.echo("pretrain");
  save_checkpoint((run.out() / "model.ckpt").string(), t.state,
                  {{"train", to_json(tc)}, {"inputs", run.inputs}, {"version", kVersion}});
  write_with(run.out() / "loss_history.csv", [&](std::ostream& os) { write_loss_history(os, t.history); });
  write_with(run.out() / "loss_curve.svg", [&](std::ostream& os) { write_loss_svg(os, t.history); });
  std::cout << "pretrain: checkpoint -> " << (run.out() / "model.ckpt").string() << "\n";
  return 0;
}

struct Encoder {
  std::string name;
  probe::EmbeddingTable table;
  bool pca = false;
};

// --checkpoint F, or --encoder pca / untrained.
Encoder resolve_encoder(Run& run, const Dataset& data, const std::string& checkpoint, const std::string& kind) {
  const auto traces = probe::prepare_traces(data.series, data.split.name);
  if (!checkpoint.empty()) {
    const auto ck = load_model(run, checkpoint);
    return {pipeline::encoder_name(ck.state.mode), probe::embed_all(ck.state, traces)};
  }
  if (kind == "pca") return {"pca", probe::trace_features(traces), true};
  if (kind == "untrained") {
    const auto s = make_model<float>(model_config_from_json(run.cfg["model"]), Mode::cross,
                                     run.cfg["train"]["seed"].get<std::uint64_t>());
    return {"untrained", probe::embed_all(s, traces)};
  }
  throw ValidationError("give --checkpoint FILE or --encoder {pca,untrained}");
}

int cmd_embed(Run& run, const std::string& checkpoint) {
  const auto data = load_data(run);
  const auto enc = resolve_encoder(run, data, checkpoint, "");
  run.echo("embed");
  write_with(run.out() / "embeddings.csv", [&](std::ostream& os) {
    os << "subject_id,stream,row,values\n";
    char buf[32];
    for (const auto& [id, streams] : enc.table)
      for (const auto& [st, e] : streams) {
        os << id << "," << to_string(st) << ",pooled,";
        for (std::size_t j = 0; j < e.vector.size(); ++j) {
          std::snprintf(buf, sizeof buf, "%s%.7g", j ? " " : "", e.vector[j]);
          os << buf;
        }
        os << "\n";
        for (Eigen::Index p = 0; p < e.per_patch.rows(); ++p) {
          os << id << "," << to_string(st) << ",P" << p + 1 << ",";
          for (Eigen::Index j = 0; j < e.per_patch.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%s%.7g", j ? " " : "", e.per_patch(p, j));
            os << buf;
          }
          os << "\n";
        }
      }
  });
  std::cout << "embed: " << enc.table.size() << " subjects -> " << (run.out() / "embeddings.csv").string() << "\n";
  return 0;
}

int cmd_probe(Run& run, const std::string& checkpoint, const std::string& kind) {
  const auto data = load_data(run);
  const auto enc = resolve_encoder(run, data, checkpoint, kind);
  auto opt = protocol_options(run);
  if (enc.pca) opt.transform = probe::pca_transform();
  run.echo("probe");
  std::ostringstream summary;
  summary << "encoder,endpoint,regime,portion,available,auroc_mean,auroc_std,f1_mean,f1_std,prauc_mean,prauc_std\n";
  for (auto ep : endpoints(run))
    for (auto reg : regimes(run)) {
      const auto in = probe::make_input(enc.table, data.split, probe::regime(reg), ep);
      auto rep = probe::run_protocol(in, reg, ep, opt);
      rep.encoder = enc.name;
      const std::string stem = enc.name + "_" + std::string(probe::to_string(ep)) + "_" +
                               std::string(probe::to_string(reg));
      write_with(run.out() / ("probe_" + stem + ".csv"), [&](std::ostream& os) { probe::write_report_csv(os, rep); });
      if (rep.available)
        write_with(run.out() / ("predictions_" + stem + ".csv"),
                   [&](std::ostream& os) { write_predictions(os, rep, in); });
      char buf[256];
      std::snprintf(buf, sizeof buf, "%.2f,%d,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f", rep.portion, rep.available ? 1 : 0,
                    rep.auroc.mean, rep.auroc.std, rep.f1.mean, rep.f1.std, rep.prauc.mean, rep.prauc.std);
      summary << enc.name << "," << probe::to_string(ep) << "," << probe::to_string(reg) << "," << buf << "\n";
      std::printf("probe: %-10s %-4s %-20s AUROC %.4f +/- %.4f\n", enc.name.c_str(),
                  std::string(probe::to_string(ep)).c_str(), std::string(probe::to_string(reg)).c_str(),
                  rep.auroc.mean, rep.auroc.std);
    }
  write_text(run.out() / "summary.csv", summary.str());
  return 0;
}

// Geometry of the pooled embeddings, against true labels and against kmeans2.
int cmd_metrics(Run& run, const std::string& checkpoint, const std::string& kind) {
  const auto data = load_data(run);
  const auto enc = resolve_encoder(run, data, checkpoint, kind);
  run.echo("metrics");
  std::ostringstream os;
  pipeline::write_geometry_header(os);
  for (auto ep : endpoints(run))
    for (Stream st : {Stream::ctru_venous, Stream::cgm_home_mean}) {
      std::vector<std::vector<double>> rows;
      std::vector<int> y;
      for (const auto& id : data.split.subjects) {
        auto it = enc.table.find(id);
        if (it == enc.table.end() || !it->second.count(st)) continue;
        rows.push_back(it->second.at(st).vector);
        y.push_back(probe::label_of(data.split.labels.at(id), ep));
      }
      if (rows.size() < 3) continue;
      Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
          X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
      const auto km = metrics::kmeans2(X, run.cfg["train"]["seed"].get<std::uint64_t>());
      const std::string e(probe::to_string(ep)), s(to_string(st));
      pipeline::write_geometry_row(os, enc.name, e, s, "true_labels", metrics::geometry(X, y), metrics::ari(y, km.labels),
                                   metrics::nmi(y, km.labels));
      pipeline::write_geometry_row(os, enc.name, e, s, "kmeans2", metrics::geometry(X, km.labels),
                                   metrics::ari(y, km.labels), metrics::nmi(y, km.labels));
    }
  write_text(run.out() / "geometry.csv", os.str());
  std::cout << os.str();
  return 0;
}

int cmd_divergence(Run& run, const std::string& checkpoint) {
  const auto data = load_data(run);
  const auto enc = resolve_encoder(run, data, checkpoint, "");
  run.echo("divergence");
  std::ostringstream out;
  bool header = true;
  for (auto ep : endpoints(run))
    for (Stream st : {Stream::ctru_venous, Stream::cgm_home_mean}) {
      std::vector<Eigen::MatrixXd> per_patch;
      std::vector<int> y;
      for (const auto& id : data.split.subjects) {
        auto it = enc.table.find(id);
        if (it == enc.table.end() || !it->second.count(st)) continue;
        per_patch.push_back(it->second.at(st).per_patch);
        y.push_back(probe::label_of(data.split.labels.at(id), ep));
      }
      if (per_patch.empty()) continue;
      std::ostringstream one;
      pipeline::write_divergence_csv(one, enc.name, std::string(probe::to_string(ep)), std::string(to_string(st)),
                                     metrics::patch_divergence(per_patch, y));
      std::string text = one.str();
      if (!header) text = text.substr(text.find('\n') + 1);
      header = false;
      out << text;
    }
  write_text(run.out() / "divergence.csv", out.str());
  std::cout << out.str();
  return 0;
}

int cmd_subgroup(Run& run, const std::string& predictions, const std::string& compare) {
  const auto data = load_data(run);
  require(predictions, "probe --out DIR");
  run.fingerprint("predictions", predictions);
  const auto rep = metrics::subgroup_report(read_predictions(predictions), data.split.demographics);
  std::optional<metrics::SubgroupReport> base;
  if (!compare.empty()) {
    require(compare, "probe --out DIR");
    run.fingerprint("compare", compare);
    base = metrics::subgroup_report(read_predictions(compare), data.split.demographics);
  }
  run.echo("subgroup");
  const std::string name = fs::path(predictions).stem().string();
  write_with(run.out() / "subgroup.csv", [&](std::ostream& os) { pipeline::write_subgroup_csv(os, name, rep); });
  if (base) {
    write_with(run.out() / "subgroup_delta.csv", [&](std::ostream& os) {
      os << "field,level,n_subjects,auroc_compare,auroc,delta\n";
      char buf[128];
      for (const auto& d : metrics::subgroup_delta(*base, rep)) {
        std::snprintf(buf, sizeof buf, "%d,%.4f,%.4f,%.4f", d.n_subjects, d.auroc_a, d.auroc_b, d.delta);
        os << d.field << "," << d.level << "," << buf << "\n";
      }
    });
  }
  std::cout << "subgroup: " << rep.rows.size() << " rows" << (rep.note.empty() ? "" : " (" + rep.note + ")") << "\n";
  return 0;
}

int cmd_ablate(Run& run) {
  const auto data = load_data(run);
  const auto& a = run.cfg["ablation"];
  pipeline::AblationPlan plan;
  plan.mask_ratios = a["mask_ratios"].get<std::vector<double>>();
  plan.lambdas = a["lambdas"].get<std::vector<double>>();
  plan.portions = a["portions"].get<std::vector<double>>();
  plan.model = model_config_from_json(run.cfg["model"]);
  plan.train = train_config(run);
  plan.train.epochs = a["epochs"];
  plan.protocol = protocol_options(run);
  const auto windows = pipeline::pretrain_windows(data.series, plan.train.stride);
  const GdCache cache = load_cache(run);
  const auto examples = pipeline::make_examples(windows, &cache);
  const auto traces = probe::prepare_traces(data.series, data.split.name);
  const auto res = pipeline::run_ablation(plan, examples, traces, data.split, [](const std::string& m) {
    std::cout << m << std::endl;
  });
  run.echo("ablate");
  const std::vector<std::pair<std::string, const std::vector<pipeline::SweepRow>*>> tables = {
      {"mask_ratio", &res.mask}, {"lambda", &res.lambda}, {"label_portion", &res.portion}};
  for (const auto& [name, rows] : tables) {
    std::ostringstream os;
    pipeline::write_sweep_table(os, name, *rows);
    write_text(run.out() / ("ablation_" + name + ".csv"), os.str());
    std::cout << os.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CGM-JEPA / X-CGM-JEPA pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::string config_path;
  std::optional<std::string> data, cache, out;
  std::optional<int> workers;
  app.add_option("--config", config_path, "JSON run config; flags override its keys")->check(CLI::ExistingFile);

  auto common = [&](CLI::App* c, bool with_data = true) {
    if (with_data) c->add_option("--data", data, "data directory (series.csv, split.json)");
    c->add_option("--out", out, "output directory");
    c->add_option("--workers", workers, "worker threads");
  };

  std::optional<int> n_subjects, days;
  std::optional<std::uint64_t> synth_seed;
  std::optional<double> noise_sd;
  auto* synth = app.add_subcommand("synth", "generate the seeded synthetic two-class cohort");
  common(synth, false);
  synth->add_option("--n-subjects", n_subjects);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--days", days, "free-living days per subject");
  synth->add_option("--noise-sd", noise_sd);

  std::optional<int> stride;
  auto* pre = app.add_subcommand("precompute-gd", "build the Glucodensity token cache");
  common(pre);
  pre->add_option("--cache", cache, "cache file (default DATA/glucodensity.gdc)");
  pre->add_option("--stride", stride);

  std::optional<std::string> mode;
  std::optional<double> mask_ratio, lambda, lr;
  std::optional<int> epochs, batch;
  std::optional<std::uint64_t> seed;
  auto* pretrain = app.add_subcommand("pretrain", "pretrain CGM-JEPA (vanilla) or X-CGM-JEPA (cross)");
  common(pretrain);
  pretrain->add_option("--cache", cache);
  pretrain->add_option("--mode", mode)->check(CLI::IsMember({"vanilla", "cross"}));
  pretrain->add_option("--mask-ratio", mask_ratio);
  pretrain->add_option("--lambda", lambda);
  pretrain->add_option("--epochs", epochs);
  pretrain->add_option("--batch-size", batch);
  pretrain->add_option("--lr", lr);
  pretrain->add_option("--seed", seed);
  pretrain->add_option("--stride", stride);

  std::string checkpoint, encoder_kind, predictions, compare;
  std::vector<std::string> regime_flags, endpoint_flags;
  std::optional<int> seeds;
  std::optional<double> portion;

  auto* embed = app.add_subcommand("embed", "frozen-encoder embeddings of every OGTT stream");
  common(embed);
  embed->add_option("--checkpoint", checkpoint)->required();

  auto* probe_cmd = app.add_subcommand("probe", "linear-probe protocol (seeds x 2 folds) per regime and endpoint");
  common(probe_cmd);
  probe_cmd->add_option("--checkpoint", checkpoint);
  probe_cmd->add_option("--encoder", encoder_kind, "baseline instead of a checkpoint")
      ->check(CLI::IsMember({"pca", "untrained"}));
  probe_cmd->add_option("--regime", regime_flags)
      ->check(CLI::IsMember({"venous_in_domain", "venous_to_cgm", "home_cgm_in_domain"}));
  probe_cmd->add_option("--endpoint", endpoint_flags)->check(CLI::IsMember({"ir", "beta"}));
  probe_cmd->add_option("--seeds", seeds);
  probe_cmd->add_option("--portion", portion);

  auto* metrics_cmd = app.add_subcommand("metrics", "cluster geometry and label agreement of pooled embeddings");
  common(metrics_cmd);
  metrics_cmd->add_option("--checkpoint", checkpoint);
  metrics_cmd->add_option("--encoder", encoder_kind)->check(CLI::IsMember({"pca", "untrained"}));
  metrics_cmd->add_option("--endpoint", endpoint_flags)->check(CLI::IsMember({"ir", "beta"}));

  auto* div = app.add_subcommand("divergence", "per-patch class-mean cosine distance");
  common(div);
  div->add_option("--checkpoint", checkpoint)->required();
  div->add_option("--endpoint", endpoint_flags)->check(CLI::IsMember({"ir", "beta"}));

  auto* sub = app.add_subcommand("subgroup", "demographic subgroup AUROC from probe predictions");
  common(sub);
  sub->add_option("--predictions", predictions)->required();
  sub->add_option("--compare", compare, "second predictions file; emits per-level deltas");

  std::optional<int> ablate_epochs;
  auto* ablate = app.add_subcommand("ablate", "mask-ratio, lambda and label-portion sweeps");
  common(ablate);
  ablate->add_option("--cache", cache);
  ablate->add_option("--epochs", ablate_epochs, "pretraining epochs per sweep model");
  ablate->add_option("--seeds", seeds);
  ablate->add_option("--batch-size", batch);
  ablate->add_option("--stride", stride);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    Run run;
    if (!config_path.empty()) {
      json user;
      try {
        user = json::parse(slurp(config_path));
      } catch (const json::exception& e) {
        throw Error(config_path + ": " + e.what());
      }
      run.cfg.merge_patch(user);
    }
    if (data) run.cfg["data"] = *data;
    if (cache) run.cfg["cache"] = *cache;
    if (out) run.cfg["out"] = *out;
    if (workers) run.cfg["workers"] = *workers;
    if (*pre && workers) run.cfg["gd_workers"] = *workers;
    auto& tr = run.cfg["train"];
    if (mode) tr["mode"] = *mode;
    if (mask_ratio) tr["mask_ratio"] = *mask_ratio;
    if (lambda) tr["lambda"] = *lambda;
    if (epochs) tr["epochs"] = *epochs;
    if (batch) tr["batch_size"] = *batch;
    if (lr) tr["base_lr"] = *lr;
    if (seed) tr["seed"] = *seed;
    if (stride) tr["stride"] = *stride;
    auto& sy = run.cfg["synth"];
    if (n_subjects) sy["n_subjects"] = *n_subjects;
    if (synth_seed) sy["seed"] = *synth_seed;
    if (days) sy["days_per_subject"] = *days;
    if (noise_sd) sy["noise_sd"] = *noise_sd;
    auto& pr = run.cfg["probe"];
    if (seeds) pr["seeds"] = *seeds;
    if (portion) pr["portion"] = *portion;
    if (!regime_flags.empty()) pr["regimes"] = regime_flags;
    if (!endpoint_flags.empty()) pr["endpoints"] = endpoint_flags;
    if (ablate_epochs) run.cfg["ablation"]["epochs"] = *ablate_epochs;

    if (*synth) return cmd_synth(run);
    if (*pre) return cmd_precompute_gd(run);
    if (*pretrain) return cmd_pretrain(run);
    if (*embed) return cmd_embed(run, checkpoint);
    if (*probe_cmd) return cmd_probe(run, checkpoint, encoder_kind);
    if (*metrics_cmd) return cmd_metrics(run, checkpoint, encoder_kind);
    if (*div) return cmd_divergence(run, checkpoint);
    if (*sub) return cmd_subgroup(run, predictions, compare);
    if (*ablate) return cmd_ablate(run);
  } catch (const StaleCacheError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
