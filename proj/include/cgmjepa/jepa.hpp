#pragma once

// CGM-JEPA and X-CGM-JEPA: context / EMA-target encoders, masked-patch
// predictor, Glucodensity encoder with cross-view predictor, the L1 latent
// objectives, the pretraining loop and checkpoint files.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgmjepa/binio.hpp"
#include "cgmjepa/glucodensity.hpp"
#include "cgmjepa/neural/layers.hpp"
#include "cgmjepa/neural/optim.hpp"
#include "cgmjepa/views.hpp"

namespace cgmjepa {

using nn::Mat;
using nn::Var;

enum class Mode { vanilla, cross };

inline std::string_view to_string(Mode m) { return m == Mode::vanilla ? "vanilla" : "cross"; }
inline Mode parse_mode(std::string_view s) {
  if (s == "vanilla") return Mode::vanilla;
  if (s == "cross") return Mode::cross;
  throw ValidationError("unknown mode '" + std::string(s) + "' (expected vanilla or cross)");
}

struct GlucoEncoderConfig {
  int token_dim = kGdTokenDim;
  int tokens = kGdTokens;
  int embed_dim = 96;
  int heads = 6;
  int layers = 2;
  int mlp_ratio = 2;
  bool operator==(const GlucoEncoderConfig&) const = default;
};

struct ModelConfig {
  nn::EncoderConfig encoder;
  nn::PredictorConfig predictor;
  GlucoEncoderConfig gluco;
  int cross_hidden = 96;
  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    encoder.validate();
    predictor.validate();
    if (gluco.embed_dim != encoder.embed_dim)
      throw ValidationError("gluco encoder embed_dim must equal the CGM encoder embed_dim");
    if (gluco.embed_dim % gluco.heads != 0) throw ValidationError("gluco encoder: embed_dim % heads != 0");
  }
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 128;
  std::uint64_t seed = 43;
  double mask_ratio = 0.25;
  double lambda = 1.0;
  double ema_momentum = 0.997;
  int stride = 288;
  double ipe_scale = 1.25;
  double base_lr = 1e-4;
  nn::Schedule schedule;
  double clip_norm = 1.0;
  Mode mode = Mode::cross;
  int workers = 1;

  void validate() const {
    if (!(lambda >= 0)) throw ValidationError("train: lambda must be >= 0");
    if (!(mask_ratio > 0 && mask_ratio < 1)) throw ValidationError("train: mask_ratio must be in (0,1)");
    if (epochs <= 0 || batch_size <= 0) throw ValidationError("train: epochs and batch_size must be positive");
    if (!(ema_momentum >= 0 && ema_momentum <= 1)) throw ValidationError("train: ema_momentum must be in [0,1]");
  }
};

template <class T>
struct ModelState {
  ModelConfig cfg;
  Mode mode = Mode::cross;
  nn::ParameterSet<T> params;
  nn::EncoderIdx context, target;
  struct {
    nn::LinearIdx in;
    int mask_token = -1;
    std::vector<nn::BlockIdx> blocks;
    nn::NormIdx norm;
    nn::LinearIdx out;
  } predictor;
  struct {
    nn::LinearIdx embed;
    std::vector<nn::BlockIdx> blocks;
    nn::NormIdx norm;
  } gluco;
  struct {
    nn::LinearIdx fc1, fc2;
  } cross;
  std::vector<std::pair<int, int>> ema_pairs;  // (target index, context index)
};

// Registers every parameter in a fixed order. The target encoder starts as an
// exact copy of the context encoder and is excluded from optimization.
template <class T>
ModelState<T> make_model(const ModelConfig& cfg, Mode mode, std::uint64_t seed) {
  cfg.validate();
  ModelState<T> s;
  s.cfg = cfg;
  s.mode = mode;
  SplitMix64 rng(derive_seed(seed, 0x1417));
  auto& ps = s.params;
  s.context = nn::add_encoder(ps, "context", cfg.encoder, rng);
  SplitMix64 dummy(0);
  s.target = nn::add_encoder(ps, "target", cfg.encoder, dummy, /*trainable=*/false);

  const int pd = cfg.predictor.embed_dim, ed = cfg.encoder.embed_dim;
  s.predictor.in = nn::add_linear(ps, "predictor.embed", ed, pd, rng);
  s.predictor.mask_token = ps.add("predictor.mask_token", nn::trunc_normal_matrix<T>(rng, 1, pd, nn::kInitStd));
  for (int l = 0; l < cfg.predictor.layers; ++l)
    s.predictor.blocks.push_back(
        nn::add_block(ps, "predictor.blocks." + std::to_string(l), pd, cfg.predictor.mlp_ratio, rng));
  s.predictor.norm = nn::add_norm(ps, "predictor.norm", pd);
  s.predictor.out = nn::add_linear(ps, "predictor.proj", pd, ed, rng);

  const auto& gc = cfg.gluco;
  s.gluco.embed = nn::add_linear(ps, "gluco.embed", gc.token_dim, gc.embed_dim, rng);
  for (int l = 0; l < gc.layers; ++l)
    s.gluco.blocks.push_back(nn::add_block(ps, "gluco.blocks." + std::to_string(l), gc.embed_dim, gc.mlp_ratio, rng));
  s.gluco.norm = nn::add_norm(ps, "gluco.norm", gc.embed_dim);

  s.cross.fc1 = nn::add_linear(ps, "cross.fc1", ed, cfg.cross_hidden, rng);
  s.cross.fc2 = nn::add_linear(ps, "cross.fc2", cfg.cross_hidden, gc.embed_dim, rng);

  for (int i = 0; i < ps.size(); ++i) {
    const std::string& name = ps[i].name;
    if (name.rfind("target.", 0) == 0) {
      const int src = ps.index("context." + name.substr(7));
      ps[i].value = ps[src].value;
      s.ema_pairs.emplace_back(i, src);
    }
  }
  return s;
}

template <class T>
Mat<T> tokens_matrix(const PatchTokens& tok) {
  Mat<T> m(tok.patches, kPatchSize);
  for (int p = 0; p < tok.patches; ++p)
    for (int k = 0; k < kPatchSize; ++k) m(p, k) = static_cast<T>(tok.at(p, k));
  return m;
}

template <class T>
Mat<T> gluco_matrix(const GlucoTokens& tok) {
  Mat<T> m(tok.rows, tok.cols);
  for (int r = 0; r < tok.rows; ++r)
    for (int c = 0; c < tok.cols; ++c) m(r, c) = static_cast<T>(tok.at(r, c));
  return m;
}

inline std::vector<int> iota_positions(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

struct CgmForward {
  Var context_tokens;  // n_visible x D, context encoder output
  Var z_ctx;           // 1 x D, mean-pooled context
  Var predicted;       // |M| x D
  Var targets;         // |M| x D, detached
};

// Context encoder on visible patches only (original positions kept); target
// encoder on all patches; predictor over projected context tokens plus one
// mask token per masked index. The target branch is tracked by the tape and
// cut with detach(), so its parameters receive exactly zero gradient.
template <class T>
CgmForward forward_cgm(nn::Tape<T>& tp, const ModelState<T>& s, const Mat<T>& tokens, const MaskSpec& mask,
                       bool detach_target = true) {
  const int P = static_cast<int>(tokens.rows());
  if (mask.patches != P) throw ValidationError("forward_cgm: mask/token size mismatch");
  std::vector<bool> masked(P, false);
  for (int j : mask.masked) masked[j] = true;
  std::vector<int> vis;
  for (int p = 0; p < P; ++p)
    if (!masked[p]) vis.push_back(p);
  Mat<T> ctx_tokens(static_cast<Eigen::Index>(vis.size()), tokens.cols());
  for (std::size_t r = 0; r < vis.size(); ++r) ctx_tokens.row(static_cast<Eigen::Index>(r)) = tokens.row(vis[r]);

  CgmForward f;
  f.context_tokens = nn::encode_patches(tp, s.context, s.cfg.encoder, ctx_tokens, vis);
  f.z_ctx = tp.mean_rows(f.context_tokens);

  Var full = nn::encode_patches(tp, s.target, s.cfg.encoder, tokens, iota_positions(P), /*track=*/1);
  Var tgt = tp.gather_rows(full, mask.masked);
  f.targets = detach_target ? tp.detach(tgt) : tgt;

  const int pd = s.cfg.predictor.embed_dim;
  Var h = nn::linear(tp, f.context_tokens, s.predictor.in);
  h = tp.add_const(h, nn::sinusoidal_positions<T>(vis, pd));
  Var m = tp.repeat_rows(tp.param(s.predictor.mask_token), static_cast<int>(mask.masked.size()));
  m = tp.add_const(m, nn::sinusoidal_positions<T>(mask.masked, pd));
  Var x = tp.concat_rows(h, m);
  for (const auto& b : s.predictor.blocks) x = nn::transformer_block(tp, x, b, s.cfg.predictor.heads);
  x = nn::norm(tp, x, s.predictor.norm);
  std::vector<int> mrows(mask.masked.size());
  for (std::size_t i = 0; i < mrows.size(); ++i) mrows[i] = static_cast<int>(vis.size() + i);
  f.predicted = nn::linear(tp, tp.gather_rows(x, mrows), s.predictor.out);
  return f;
}

// Mean over masked patches and embedding dimensions of |pred - target|.
template <class T>
Var loss_cgm(nn::Tape<T>& tp, Var predicted, Var targets) {
  return tp.l1_mean(predicted, targets);
}

// Encodes the masked-out subset of Glucodensity tokens (with their spatial
// positions) and mean-pools to a single embedding u. Gradients flow into g_psi.
template <class T>
Var forward_gluco(nn::Tape<T>& tp, const ModelState<T>& s, const Mat<T>& gtokens, const MaskSpec& gmask,
                  bool add_positions = true) {
  const auto& gc = s.cfg.gluco;
  if (gtokens.rows() != gc.tokens || gtokens.cols() != gc.token_dim)
    throw ValidationError("forward_gluco: token shape mismatch");
  Var sel = tp.gather_rows(tp.constant(gtokens), gmask.masked);
  Var x = nn::linear(tp, sel, s.gluco.embed);
  if (add_positions) x = tp.add_const(x, nn::sinusoidal_positions<T>(gmask.masked, gc.embed_dim));
  for (const auto& b : s.gluco.blocks) x = nn::transformer_block(tp, x, b, gc.heads);
  x = nn::norm(tp, x, s.gluco.norm);
  return tp.mean_rows(x);
}

// q_omega: 2-layer GELU MLP from the pooled CGM context embedding.
template <class T>
Var cross_predict(nn::Tape<T>& tp, const ModelState<T>& s, Var z_ctx) {
  return nn::linear(tp, tp.gelu(nn::linear(tp, z_ctx, s.cross.fc1)), s.cross.fc2);
}

// Mean absolute difference over the embedding dimensions.
template <class T>
Var loss_gd(nn::Tape<T>& tp, Var u_hat, Var u) {
  return tp.l1_mean(u_hat, u);
}

struct LossVars {
  Var l_cgm, l_gd, l_total;
};

struct LossBreakdown {
  double l_cgm = 0, l_gd = 0, l_total = 0;
};

// Per-window objective. In vanilla mode the Glucodensity branch is never
// evaluated and l_gd is the constant 0.
template <class T>
LossVars sample_loss(nn::Tape<T>& tp, const ModelState<T>& s, const Mat<T>& tokens, const MaskSpec& mask,
                     const Mat<T>* gtokens, const MaskSpec* gmask, double lambda, bool detach_target = true) {
  LossVars L;
  const CgmForward f = forward_cgm(tp, s, tokens, mask, detach_target);
  L.l_cgm = loss_cgm(tp, f.predicted, f.targets);
  if (s.mode == Mode::cross) {
    if (!gtokens || !gmask) throw ValidationError("cross mode requires Glucodensity tokens");
    Var u = forward_gluco(tp, s, *gtokens, *gmask);
    Var u_hat = cross_predict(tp, s, f.z_ctx);
    L.l_gd = loss_gd(tp, u_hat, u);
  } else {
    L.l_gd = tp.constant(Mat<T>::Zero(1, 1));
  }
  L.l_total = tp.add_scaled(L.l_cgm, L.l_gd, static_cast<T>(lambda));
  return L;
}

// ---------------------------------------------------------------------------
// Training

template <class T>
struct TrainExample {
  Mat<T> tokens;  // P x 12
  const GlucoTokens* gd = nullptr;
  std::string subject_id;
  int split_idx = 0;
};

struct EpochRecord {
  int epoch = 0;
  double l_cgm = 0, l_gd = 0, l_total = 0;
  double lr = 0;
  double grad_norm = 0;
};

inline long planned_total_steps(const TrainConfig& cfg, std::size_t corpus_size) {
  const long per_epoch = static_cast<long>((corpus_size + cfg.batch_size - 1) / cfg.batch_size);
  return std::max<long>(1, static_cast<long>(std::ceil(cfg.epochs * per_epoch * cfg.ipe_scale)));
}

// Masks for one (epoch, example) pair; independent of batching and threading.
struct ExampleMasks {
  MaskSpec cgm, gd;
};

inline ExampleMasks draw_masks(const TrainConfig& cfg, int epoch, std::size_t example, int patches, int gd_tokens) {
  SplitMix64 rng(derive_seed(cfg.seed, 0x6D61736B, static_cast<std::uint64_t>(epoch), example));
  ExampleMasks m;
  m.cgm = sample_mask(patches, cfg.mask_ratio, rng);
  m.gd = sample_mask(gd_tokens, cfg.mask_ratio, rng);
  return m;
}

inline constexpr std::size_t kTrainChunk = 8;

template <class T>
class Trainer {
 public:
  Trainer(ModelState<T>& state, const TrainConfig& cfg, std::size_t corpus_size)
      : state_(state), cfg_(cfg), opt_(state.params) {
    cfg.validate();
    opt_.base_lr = cfg.base_lr;
    opt_.schedule = cfg.schedule;
    opt_.clip_norm = cfg.clip_norm;
    opt_.total_steps = planned_total_steps(cfg, corpus_size);
  }

  nn::OptimState<T>& optimizer() { return opt_; }

  // One optimizer step over `batch` (indices into corpus). Gradients are
  // computed in fixed-size chunks and summed in chunk order, so the result
  // does not depend on the number of workers.
  std::pair<LossBreakdown, nn::StepInfo> step(const std::vector<TrainExample<T>>& corpus,
                                              const std::vector<std::size_t>& batch, int epoch) {
    const std::size_t nchunks = (batch.size() + kTrainChunk - 1) / kTrainChunk;
    std::vector<nn::Gradients<T>> grads(nchunks, nn::Gradients<T>(state_.params));
    std::vector<LossBreakdown> losses(nchunks);
    const T inv_b = static_cast<T>(1.0 / static_cast<double>(batch.size()));
    auto run_chunk = [&](std::size_t c) {
      for (std::size_t k = c * kTrainChunk; k < std::min(batch.size(), (c + 1) * kTrainChunk); ++k) {
        const auto& ex = corpus[batch[k]];
        const ExampleMasks masks =
            draw_masks(cfg_, epoch, batch[k], static_cast<int>(ex.tokens.rows()), state_.cfg.gluco.tokens);
        Mat<T> g;
        if (state_.mode == Mode::cross) {
          if (!ex.gd)
            throw Error("no Glucodensity tokens for (" + ex.subject_id + ", " + std::to_string(ex.split_idx) +
                        "); run precompute-gd");
          g = gluco_matrix<T>(*ex.gd);
        }
        nn::Tape<T> tp(&state_.params);
        const LossVars L = sample_loss(tp, state_, ex.tokens, masks.cgm, state_.mode == Mode::cross ? &g : nullptr,
                                       &masks.gd, cfg_.lambda);
        const double lt = static_cast<double>(tp.scalar(L.l_total));
        if (!std::isfinite(lt))
          throw Error("non-finite loss at epoch " + std::to_string(epoch + 1) + " on (" + ex.subject_id + ", " +
                      std::to_string(ex.split_idx) + ")");
        losses[c].l_cgm += static_cast<double>(tp.scalar(L.l_cgm));
        losses[c].l_gd += static_cast<double>(tp.scalar(L.l_gd));
        losses[c].l_total += lt;
        tp.backward(L.l_total, grads[c], inv_b);
      }
    };
    run_parallel(nchunks, run_chunk);
    for (std::size_t c = 1; c < nchunks; ++c) grads[0].add(grads[c]);
    LossBreakdown sum;
    for (const auto& l : losses) {
      sum.l_cgm += l.l_cgm;
      sum.l_gd += l.l_gd;
      sum.l_total += l.l_total;
    }
    const nn::StepInfo info = nn::adam_step(state_.params, grads[0], opt_);
    nn::ema_update(state_.params, state_.ema_pairs, cfg_.ema_momentum);
    return {sum, info};
  }

 private:
  template <class F>
  void run_parallel(std::size_t n, F&& f) {
    const int w = std::max(1, std::min<int>(cfg_.workers, static_cast<int>(n)));
    if (w == 1) {
      for (std::size_t i = 0; i < n; ++i) f(i);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t)
      pool.emplace_back([&] {
        try {
          for (std::size_t i = next++; i < n; i = next++) f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(mu);
          if (!err) err = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
  }

  ModelState<T>& state_;
  TrainConfig cfg_;
  nn::OptimState<T> opt_;
};

// Full pretraining: per epoch a seeded shuffle, batches in order (last partial
// batch kept), one optimizer + EMA step per batch. Returns per-epoch mean losses.
template <class T>
std::vector<EpochRecord> train(ModelState<T>& state, const std::vector<TrainExample<T>>& corpus,
                               const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (corpus.empty()) throw ValidationError("train: empty corpus");
  if (state.mode != cfg.mode) throw ValidationError("train: model mode differs from config mode");
  if (cfg.mode == Mode::cross)
    for (const auto& ex : corpus)
      if (!ex.gd)
        throw ValidationError("train: Glucodensity cache does not cover (" + ex.subject_id + ", " +
                              std::to_string(ex.split_idx) + "); run precompute-gd");
  Trainer<T> trainer(state, cfg, corpus.size());
  std::vector<EpochRecord> history;
  std::vector<std::size_t> order(corpus.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(derive_seed(cfg.seed, 0x73687566, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> batch(order.begin() + start,
                                     order.begin() + std::min(order.size(), start + cfg.batch_size));
      auto [loss, info] = trainer.step(corpus, batch, epoch);
      rec.l_cgm += loss.l_cgm;
      rec.l_gd += loss.l_gd;
      rec.l_total += loss.l_total;
      rec.lr = info.lr;
      rec.grad_norm = info.grad_norm;
    }
    const double n = static_cast<double>(corpus.size());
    rec.l_cgm /= n;
    rec.l_gd /= n;
    rec.l_total /= n;
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   magic "CGMJCKPT" | u32 version | u32 len + UTF-8 JSON config block |
//   u32 n_params | n_params x { u32 len + name | u32 rows | u32 cols |
//                               u32 trainable | rows*cols float32 }
// All integers and floats little-endian.

inline nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"encoder",
       {{"embed_dim", c.encoder.embed_dim},
        {"heads", c.encoder.heads},
        {"layers", c.encoder.layers},
        {"patch_size", c.encoder.patch_size},
        {"conv_kernel", c.encoder.conv_kernel},
        {"max_patches", c.encoder.max_patches},
        {"mlp_ratio", c.encoder.mlp_ratio},
        {"bias", c.encoder.bias},
        {"dropout", c.encoder.dropout}}},
      {"predictor",
       {{"embed_dim", c.predictor.embed_dim},
        {"heads", c.predictor.heads},
        {"layers", c.predictor.layers},
        {"mlp_ratio", c.predictor.mlp_ratio}}},
      {"gluco",
       {{"token_dim", c.gluco.token_dim},
        {"tokens", c.gluco.tokens},
        {"embed_dim", c.gluco.embed_dim},
        {"heads", c.gluco.heads},
        {"layers", c.gluco.layers},
        {"mlp_ratio", c.gluco.mlp_ratio}}},
      {"cross_hidden", c.cross_hidden},
  };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& e = j.at("encoder");
  c.encoder.embed_dim = e.at("embed_dim");
  c.encoder.heads = e.at("heads");
  c.encoder.layers = e.at("layers");
  c.encoder.patch_size = e.at("patch_size");
  c.encoder.conv_kernel = e.at("conv_kernel");
  c.encoder.max_patches = e.at("max_patches");
  c.encoder.mlp_ratio = e.at("mlp_ratio");
  c.encoder.bias = e.at("bias");
  c.encoder.dropout = e.at("dropout");
  const auto& p = j.at("predictor");
  c.predictor.embed_dim = p.at("embed_dim");
  c.predictor.heads = p.at("heads");
  c.predictor.layers = p.at("layers");
  c.predictor.mlp_ratio = p.at("mlp_ratio");
  const auto& g = j.at("gluco");
  c.gluco.token_dim = g.at("token_dim");
  c.gluco.tokens = g.at("tokens");
  c.gluco.embed_dim = g.at("embed_dim");
  c.gluco.heads = g.at("heads");
  c.gluco.layers = g.at("layers");
  c.gluco.mlp_ratio = g.at("mlp_ratio");
  c.cross_hidden = j.at("cross_hidden");
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"mask_ratio", c.mask_ratio},
      {"lambda", c.lambda},
      {"ema_momentum", c.ema_momentum},
      {"stride", c.stride},
      {"ipe_scale", c.ipe_scale},
      {"base_lr", c.base_lr},
      {"warmup_ratio", c.schedule.warmup_ratio},
      {"step_size", c.schedule.step_size},
      {"gamma", c.schedule.gamma},
      {"clip_norm", c.clip_norm},
      {"mode", std::string(to_string(c.mode))},
  };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
  c.lambda = j.value("lambda", c.lambda);
  c.ema_momentum = j.value("ema_momentum", c.ema_momentum);
  c.stride = j.value("stride", c.stride);
  c.ipe_scale = j.value("ipe_scale", c.ipe_scale);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.schedule.warmup_ratio = j.value("warmup_ratio", c.schedule.warmup_ratio);
  c.schedule.step_size = j.value("step_size", c.schedule.step_size);
  c.schedule.gamma = j.value("gamma", c.schedule.gamma);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  return c;
}

struct Checkpoint {
  ModelState<float> state;
  nlohmann::json meta;  // model, mode, train config, version and any extra fields
};

inline constexpr char kCheckpointMagic[8] = {'C', 'G', 'M', 'J', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const ModelState<float>& s, nlohmann::json meta) {
  meta["model"] = to_json(s.cfg);
  meta["mode"] = std::string(to_string(s.mode));
  if (!meta.contains("version")) meta["version"] = kVersion;
  os.write(kCheckpointMagic, 8);
  binio::put_u32(os, kCheckpointVersion);
  binio::put_str(os, meta.dump());
  binio::put_u32(os, static_cast<std::uint32_t>(s.params.size()));
  for (const auto& p : s.params) {
    binio::put_str(os, p.name);
    binio::put_u32(os, static_cast<std::uint32_t>(p.value.rows()));
    binio::put_u32(os, static_cast<std::uint32_t>(p.value.cols()));
    binio::put_u32(os, p.trainable ? 1u : 0u);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) binio::put_f32(os, p.value.data()[i]);
  }
}

inline void save_checkpoint(const std::string& path, const ModelState<float>& s, const nlohmann::json& meta) {
  binio::write_atomically(path, [&](std::ostream& os) { write_checkpoint(os, s, meta); });
}

// Rebuilds the model from the header config and fills it block by block; any
// name/shape disagreement aborts before a state is returned.
inline Checkpoint read_checkpoint(std::istream& is, const ModelConfig* expected = nullptr) {
  char magic[8];
  binio::read_exact(is, magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("not a checkpoint file");
  const std::uint32_t version = binio::get_u32(is);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(binio::get_str(is));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint config block: ") + e.what());
  }
  ModelConfig cfg;
  Mode mode;
  try {
    cfg = model_config_from_json(meta.at("model"));
    mode = parse_mode(meta.at("mode").get<std::string>());
    cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config block incomplete: ") + e.what());
  } catch (const ValidationError& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (expected && !(*expected == cfg)) throw CheckpointError("checkpoint model config does not match expected config");
  Checkpoint ck{make_model<float>(cfg, mode, 0), meta};
  const std::uint32_t n = binio::get_u32(is);
  if (static_cast<int>(n) != ck.state.params.size())
    throw CheckpointError("checkpoint has " + std::to_string(n) + " parameter blocks, config implies " +
                          std::to_string(ck.state.params.size()));
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = binio::get_str(is);
    const std::uint32_t rows = binio::get_u32(is), cols = binio::get_u32(is);
    const std::uint32_t trainable = binio::get_u32(is);
    auto& p = ck.state.params[static_cast<int>(i)];
    if (p.name != name) throw CheckpointError("checkpoint block " + name + " where " + p.name + " expected");
    if (p.value.rows() != rows || p.value.cols() != cols)
      throw CheckpointError("checkpoint block " + name + " has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", config implies " + std::to_string(p.value.rows()) + "x" +
                            std::to_string(p.value.cols()));
    if ((trainable != 0) != p.trainable) throw CheckpointError("checkpoint block " + name + " trainable flag mismatch");
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = binio::get_f32(is);
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path + "; run pretrain first");
  try {
    return read_checkpoint(is, expected);
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

// FNV-1a 64 over a byte stream; used as a content fingerprint in run outputs.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string file_fingerprint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(ss.str())));
  return buf;
}

}  // namespace cgmjepa
