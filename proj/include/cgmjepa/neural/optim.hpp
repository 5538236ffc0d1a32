#pragma once

// Adam with global-norm clipping, the warmup + step-decay learning-rate
// schedule, and EMA parameter tracking.

#include <cmath>
#include <utility>
#include <vector>

#include "cgmjepa/neural/tensor.hpp"

namespace cgmjepa::nn {

struct Schedule {
  double warmup_ratio = 0.15;
  long step_size = 100;
  double gamma = 0.99;
};

template <class T>
struct OptimState {
  std::vector<Mat<T>> m, v;  // first / second moments, shaped like the parameters
  long step = 0;
  long total_steps = 1;
  double base_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  Schedule schedule;

  OptimState() = default;
  explicit OptimState(const ParameterSet<T>& ps) {
    for (const auto& p : ps) {
      m.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
      v.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
    }
  }
};

inline long warmup_steps(long total_steps, const Schedule& s) {
  return static_cast<long>(s.warmup_ratio * static_cast<double>(total_steps));
}

// Linear warmup 0 -> base over the first warmup_ratio of steps, then
// base * gamma^floor((step - warmup_end) / step_size).
inline double lr_at(long step, long total_steps, double base_lr, const Schedule& s) {
  const long warm = warmup_steps(total_steps, s);
  if (step < warm) return base_lr * static_cast<double>(step) / static_cast<double>(warm);
  return base_lr * std::pow(s.gamma, static_cast<double>((step - warm) / s.step_size));
}

template <class T>
double lr_at(long step, const OptimState<T>& opt) {
  return lr_at(step, opt.total_steps, opt.base_lr, opt.schedule);
}

// Scales all trainable gradients so their joint L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <class T>
double clip_global_norm(Gradients<T>& grads, const ParameterSet<T>& ps, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm(ps, true));
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (int i = 0; i < ps.size(); ++i)
      if (ps[i].trainable) grads.g[i] *= s;
  }
  return norm;
}

struct StepInfo {
  double lr = 0;
  double grad_norm = 0;
};

template <class T>
StepInfo adam_step(ParameterSet<T>& ps, Gradients<T>& grads, OptimState<T>& opt) {
  if (!grads.all_finite()) throw Error("adam_step: non-finite gradients");
  StepInfo info;
  info.grad_norm = clip_global_norm(grads, ps, opt.clip_norm);
  info.lr = lr_at(opt.step, opt);
  const long t = opt.step + 1;
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(opt.beta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(opt.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(info.lr), eps = static_cast<T>(opt.eps);
  for (int i = 0; i < ps.size(); ++i) {
    if (!ps[i].trainable) continue;
    auto& g = grads.g[i];
    opt.m[i] = b1 * opt.m[i] + (T(1) - b1) * g;
    opt.v[i] = b2 * opt.v[i] + (T(1) - b2) * g.cwiseProduct(g);
    auto mhat = opt.m[i].array() / c1;
    auto vhat = opt.v[i].array() / c2;
    ps[i].value.array() -= lr * mhat / (vhat.sqrt() + eps);
  }
  opt.step = t;
  return info;
}

// target <- m * target + (1 - m) * source, elementwise, for each index pair.
template <class T>
void ema_update(ParameterSet<T>& ps, const std::vector<std::pair<int, int>>& target_source, double momentum) {
  const T m = static_cast<T>(momentum);
  const T w = static_cast<T>(1.0 - momentum);
  for (auto [ti, si] : target_source) {
    auto& tv = ps[ti].value;
    const auto& sv = ps[si].value;
    if (tv.rows() != sv.rows() || tv.cols() != sv.cols()) throw Error("ema_update: shape mismatch");
    tv = m * tv + w * sv;
  }
}

}  // namespace cgmjepa::nn
