#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "cgmjepa/common.hpp"
#include "cgmjepa/rng.hpp"

namespace cgmjepa::nn {

// Every tensor in the model is a row-major matrix: sequences are (tokens x features).
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Parameter {
  std::string name;
  Mat<T> value;
  bool trainable = true;
};

template <class T>
class ParameterSet {
 public:
  int add(std::string name, Mat<T> value, bool trainable = true) {
    if (index_.count(name)) throw Error("duplicate parameter " + name);
    index_[name] = static_cast<int>(params_.size());
    params_.push_back({std::move(name), std::move(value), trainable});
    return static_cast<int>(params_.size()) - 1;
  }

  int size() const { return static_cast<int>(params_.size()); }
  Parameter<T>& operator[](int i) { return params_[i]; }
  const Parameter<T>& operator[](int i) const { return params_[i]; }
  int index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter named " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t scalar_count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (!trainable_only || p.trainable) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>(), p.trainable);
    return out;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, int> index_;
};

// Gradient buffer aligned with a ParameterSet.
template <class T>
struct Gradients {
  std::vector<Mat<T>> g;

  Gradients() = default;
  explicit Gradients(const ParameterSet<T>& ps) {
    g.reserve(ps.size());
    for (const auto& p : ps) g.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
  }
  void zero() {
    for (auto& m : g) m.setZero();
  }
  void add(const Gradients& o) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.g[i];
  }
  double squared_norm(const ParameterSet<T>& ps, bool trainable_only = true) const {
    double s = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!trainable_only || ps[static_cast<int>(i)].trainable)
        s += static_cast<double>(g[i].squaredNorm());
    return s;
  }
  bool all_finite() const {
    for (const auto& m : g)
      if (!m.allFinite()) return false;
    return true;
  }
};

// Normal(0, std) truncated to [-2 std, 2 std] by rejection.
inline double trunc_normal(SplitMix64& rng, double std) {
  for (;;) {
    const double z = rng.normal();
    if (z >= -2.0 && z <= 2.0) return z * std;
  }
}

template <class T>
Mat<T> trunc_normal_matrix(SplitMix64& rng, int rows, int cols, double std) {
  Mat<T> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = static_cast<T>(trunc_normal(rng, std));
  return m;
}

// Row p, column 2i = sin(p w_i), column 2i+1 = cos(p w_i), w_i = 10000^(-2i/dim).
template <class T>
Mat<T> sinusoidal_positions(const std::vector<int>& positions, int dim) {
  Mat<T> pe(static_cast<int>(positions.size()), dim);
  for (int r = 0; r < static_cast<int>(positions.size()); ++r) {
    const double p = positions[r];
    for (int c = 0; c < dim; ++c) {
      const int i = c / 2;
      const double w = std::pow(10000.0, -2.0 * i / dim);
      pe(r, c) = static_cast<T>((c % 2 == 0) ? std::sin(p * w) : std::cos(p * w));
    }
  }
  return pe;
}

template <class T>
Mat<T> sinusoidal_positions(int count, int dim) {
  std::vector<int> pos(count);
  for (int i = 0; i < count; ++i) pos[i] = i;
  return sinusoidal_positions<T>(pos, dim);
}

}  // namespace cgmjepa::nn
