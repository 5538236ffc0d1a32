#pragma once

// Small model and corpus fixtures shared by the unit and acceptance suites.

#include <vector>

#include "cgmjepa/jepa.hpp"

namespace cgmjepa::testing {

// embed 8, 2 heads, 1 layer, P = 4 CGM patches, 4 Glucodensity tokens.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.encoder.embed_dim = 8;
  c.encoder.heads = 2;
  c.encoder.layers = 1;
  c.encoder.max_patches = 4;
  c.predictor.embed_dim = 4;
  c.predictor.heads = 2;
  c.predictor.layers = 1;
  c.gluco.token_dim = 6;
  c.gluco.tokens = 4;
  c.gluco.embed_dim = 8;
  c.gluco.heads = 2;
  c.gluco.layers = 1;
  c.cross_hidden = 8;
  return c;
}

// Replaces every parameter with N(0, sd) draws so LayerNorm gains, biases and
// the target copy are all generic (not at their initial 1 / 0 / equal values).
template <class T>
void randomize(ModelState<T>& s, std::uint64_t seed, double sd = 0.3) {
  SplitMix64 r(seed);
  for (auto& p : s.params)
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(sd * r.normal());
}

template <class T>
nn::Mat<T> random_tokens(SplitMix64& r, int rows, int cols, double sd = 1.0) {
  nn::Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(sd * r.normal());
  return m;
}

struct TinyCorpus {
  std::vector<GlucoTokens> gd;
  std::vector<TrainExample<float>> examples;
};

// n windows of 4 x 12 smooth-ish sequences plus 4 x 6 Glucodensity tokens.
inline TinyCorpus tiny_corpus(std::size_t n, std::uint64_t seed) {
  SplitMix64 r(seed);
  TinyCorpus c;
  c.gd.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double level = r.normal(), slope = 0.1 * r.normal();
    nn::Mat<float> tok(4, 12);
    for (int k = 0; k < 48; ++k)
      tok(k / 12, k % 12) = static_cast<float>(level + slope * k + 0.1 * r.normal());
    c.gd[i].rows = 4;
    c.gd[i].cols = 6;
    c.gd[i].data.assign(24, 0.0);
    for (double& v : c.gd[i].data) v = 0.5 + 0.5 * std::tanh(level + 0.2 * r.normal());
    c.examples.push_back({tok, nullptr, "S" + std::to_string(i), 0});
  }
  for (std::size_t i = 0; i < n; ++i) c.examples[i].gd = &c.gd[i];
  return c;
}

}  // namespace cgmjepa::testing
