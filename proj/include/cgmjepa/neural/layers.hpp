#pragma once

// Model building blocks: parameter registration with initialization, and
// forward passes recorded on a Tape.

#include <string>
#include <vector>

#include "cgmjepa/neural/tape.hpp"

namespace cgmjepa::nn {

struct EncoderConfig {
  int embed_dim = 96;
  int heads = 6;
  int layers = 3;
  int patch_size = 12;
  int conv_kernel = 3;
  int max_patches = 24;
  int mlp_ratio = 2;
  bool bias = true;
  double dropout = 0.0;

  void validate() const {
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
      throw ValidationError("encoder: embed_dim must be divisible by heads");
    if (layers < 0 || patch_size <= 0 || conv_kernel <= 0 || conv_kernel % 2 == 0)
      throw ValidationError("encoder: invalid layer/patch/kernel settings");
    if (dropout != 0.0) throw ValidationError("encoder: only dropout = 0 is supported");
  }
  bool operator==(const EncoderConfig&) const = default;
};

struct PredictorConfig {
  int embed_dim = 48;
  int heads = 2;
  int layers = 1;
  int mlp_ratio = 2;

  void validate() const {
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
      throw ValidationError("predictor: embed_dim must be divisible by heads");
  }
  bool operator==(const PredictorConfig&) const = default;
};

struct LinearIdx {
  int w = -1, b = -1;
};
struct NormIdx {
  int g = -1, b = -1;
};
struct BlockIdx {
  NormIdx ln1;
  LinearIdx q, k, v, o;
  NormIdx ln2;
  LinearIdx fc1, fc2;
};

inline constexpr double kInitStd = 0.02;

template <class T>
LinearIdx add_linear(ParameterSet<T>& ps, const std::string& name, int in, int out, SplitMix64& rng,
                     bool trainable = true) {
  LinearIdx l;
  l.w = ps.add(name + ".weight", trunc_normal_matrix<T>(rng, in, out, kInitStd), trainable);
  l.b = ps.add(name + ".bias", Mat<T>::Zero(1, out), trainable);
  return l;
}

template <class T>
NormIdx add_norm(ParameterSet<T>& ps, const std::string& name, int dim, bool trainable = true) {
  NormIdx n;
  n.g = ps.add(name + ".weight", Mat<T>::Ones(1, dim), trainable);
  n.b = ps.add(name + ".bias", Mat<T>::Zero(1, dim), trainable);
  return n;
}

template <class T>
BlockIdx add_block(ParameterSet<T>& ps, const std::string& name, int dim, int mlp_ratio, SplitMix64& rng,
                   bool trainable = true) {
  BlockIdx b;
  b.ln1 = add_norm(ps, name + ".norm1", dim, trainable);
  b.q = add_linear(ps, name + ".attn.q", dim, dim, rng, trainable);
  b.k = add_linear(ps, name + ".attn.k", dim, dim, rng, trainable);
  b.v = add_linear(ps, name + ".attn.v", dim, dim, rng, trainable);
  b.o = add_linear(ps, name + ".attn.proj", dim, dim, rng, trainable);
  b.ln2 = add_norm(ps, name + ".norm2", dim, trainable);
  b.fc1 = add_linear(ps, name + ".mlp.fc1", dim, dim * mlp_ratio, rng, trainable);
  b.fc2 = add_linear(ps, name + ".mlp.fc2", dim * mlp_ratio, dim, rng, trainable);
  return b;
}

template <class T>
Var linear(Tape<T>& tp, Var x, const LinearIdx& l, int track = -1) {
  return tp.linear(x, tp.param(l.w, track), tp.param(l.b, track));
}

template <class T>
Var norm(Tape<T>& tp, Var x, const NormIdx& n, int track = -1) {
  return tp.layer_norm(x, tp.param(n.g, track), tp.param(n.b, track));
}

// Multi-head self-attention on an (n x d) sequence.
template <class T>
Var self_attention(Tape<T>& tp, Var x, const BlockIdx& b, int heads, int track = -1,
                   std::vector<Mat<T>>* weights = nullptr) {
  Var q = linear(tp, x, b.q, track);
  Var k = linear(tp, x, b.k, track);
  Var v = linear(tp, x, b.v, track);
  Var a = tp.attention(q, k, v, heads, weights);
  return linear(tp, a, b.o, track);
}

// Pre-norm block: x + MHA(LN(x)), then + MLP(LN(.)).
template <class T>
Var transformer_block(Tape<T>& tp, Var x, const BlockIdx& b, int heads, int track = -1,
                      std::vector<Mat<T>>* weights = nullptr) {
  Var h = self_attention(tp, norm(tp, x, b.ln1, track), b, heads, track, weights);
  x = tp.add(x, h);
  Var m = linear(tp, tp.gelu(linear(tp, norm(tp, x, b.ln2, track), b.fc1, track)), b.fc2, track);
  return tp.add(x, m);
}

// Patch encoder: conv patch embedding, added sinusoidal positions, pre-norm
// blocks and a final LayerNorm.
struct EncoderIdx {
  int conv_w = -1, conv_b = -1;
  std::vector<BlockIdx> blocks;
  NormIdx norm;
};

template <class T>
EncoderIdx add_encoder(ParameterSet<T>& ps, const std::string& name, const EncoderConfig& cfg, SplitMix64& rng,
                       bool trainable = true) {
  cfg.validate();
  EncoderIdx e;
  e.conv_w = ps.add(name + ".patch_embed.weight",
                    trunc_normal_matrix<T>(rng, cfg.embed_dim, cfg.conv_kernel, kInitStd), trainable);
  e.conv_b = ps.add(name + ".patch_embed.bias", Mat<T>::Zero(1, cfg.embed_dim), trainable);
  for (int l = 0; l < cfg.layers; ++l)
    e.blocks.push_back(add_block(ps, name + ".blocks." + std::to_string(l), cfg.embed_dim, cfg.mlp_ratio, rng,
                                 trainable));
  e.norm = add_norm(ps, name + ".norm", cfg.embed_dim, trainable);
  return e;
}

// tokens: n x patch_size patches located at `positions` of the full sequence.
template <class T>
Var encode_patches(Tape<T>& tp, const EncoderIdx& e, const EncoderConfig& cfg, const Mat<T>& tokens,
                   const std::vector<int>& positions, int track = -1, bool add_positions = true) {
  if (tokens.cols() != cfg.patch_size) throw Error("encoder: token width != patch_size");
  if (static_cast<std::size_t>(tokens.rows()) != positions.size()) throw Error("encoder: positions/tokens mismatch");
  for (int p : positions)
    if (p < 0 || p >= cfg.max_patches) throw Error("encoder: patch position beyond max_patches");
  Var x = tp.conv_patch_embed(tp.constant(tokens), tp.param(e.conv_w, track), tp.param(e.conv_b, track));
  if (add_positions) x = tp.add_const(x, sinusoidal_positions<T>(positions, cfg.embed_dim));
  for (const auto& b : e.blocks) x = transformer_block(tp, x, b, cfg.heads, track);
  return norm(tp, x, e.norm, track);
}

}  // namespace cgmjepa::nn
