// Adam with bias correction, the warmup learning-rate schedule, global-norm
// gradient clipping, and a finite-difference gradient checker.

#ifndef SOVMAS_OPTIM_HPP
#define SOVMAS_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sovmas/tensor.hpp"

namespace sovmas {

enum class LrScheduleKind { kInverseSqrtWarmup, kConstant };

struct LrSchedule {
  double peak_lr = 5e-4;
  int64_t warmup_steps = 5000;
  LrScheduleKind kind = LrScheduleKind::kInverseSqrtWarmup;
};

// Linear ramp to peak_lr over warmup_steps, then inverse-sqrt decay; the two
// branches meet at s == warmup_steps.
inline double lr_at(const LrSchedule& schedule, int64_t step) {
  if (step <= 0) reject("lr_at: step must be >= 1");
  if (schedule.peak_lr <= 0 || schedule.warmup_steps <= 0)
    reject("lr_at: peak_lr and warmup_steps must be positive");
  if (schedule.kind == LrScheduleKind::kConstant) return schedule.peak_lr;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(schedule.warmup_steps);
  return schedule.peak_lr * std::min(s / w, std::sqrt(w / s));
}

template <typename T>
struct AdamState {
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.998;
  double epsilon = 1e-8;
  std::vector<std::vector<T>> m;  // one accumulator pair per parameter
  std::vector<std::vector<T>> v;

  static AdamState init(const std::vector<Tensor<T>>& params, double beta1 = 0.9,
                        double beta2 = 0.998, double epsilon = 1e-8) {
    AdamState s;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    for (const auto& p : params) {
      s.m.emplace_back(static_cast<size_t>(p.numel()), T(0));
      s.v.emplace_back(static_cast<size_t>(p.numel()), T(0));
    }
    return s;
  }
};

// Scales all gradients in place so their global L2 norm is at most
// max_norm; returns the pre-clip norm.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double ssq = 0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) ssq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(ssq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& p : params)
      if (p.has_grad())
        for (T& g : p.mutable_grad()) g *= f;
  }
  return norm;
}

// One bias-corrected update over every parameter's populated gradient.
// A non-finite gradient entry rejects the whole step before any parameter
// is touched; the caller decides whether to skip or abort.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr) {
  if (lr <= 0) reject("adam_step: lr must be positive");
  if (state.m.size() != params.size() || state.v.size() != params.size())
    reject("adam_step: state does not match parameter count");
  for (size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != static_cast<size_t>(params[i].numel()))
      reject("adam_step: accumulator shape mismatch at parameter " + std::to_string(i));
    for (T g : params[i].grad())
      if (!std::isfinite(static_cast<double>(g)))
        throw std::runtime_error("adam_step: non-finite gradient at parameter " +
                                 std::to_string(i));
  }
  state.step += 1;
  const double corr1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_values();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = state.beta1 * static_cast<double>(m[j]) + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * static_cast<double>(v[j]) + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      w[j] -= static_cast<T>(lr * (mj / corr1) / (std::sqrt(vj / corr2) + state.epsilon));
    }
  }
}

// Compares reverse-mode gradients against central finite differences on a
// deterministic sample of at most `max_entries_per_tensor` entries per
// parameter. `build_loss` must be a pure function of the parameter values.
// Returns the worst guarded relative error |ad - fd| / max(1, |ad|, |fd|);
// the unit floor keeps finite-difference roundoff on near-zero entries from
// drowning the signal, and entries where both gradients vanish count as
// zero error.
template <typename T>
double grad_check(const std::function<Tensor<T>()>& build_loss,
                  std::vector<Tensor<T>>& params, double eps,
                  int max_entries_per_tensor = 64, uint64_t sample_seed = 17) {
  for (auto& p : params) p.zero_grad();
  Tensor<T> loss = build_loss();
  loss.backward();
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  const double abs_floor = std::is_same_v<T, double> ? 1e-10 : 1e-5;
  std::mt19937_64 rng(sample_seed);
  double worst = 0;
  NoGradGuard no_grad;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto w = params[pi].mutable_values();
    std::vector<int64_t> picks;
    if (static_cast<int>(w.size()) <= max_entries_per_tensor) {
      picks.resize(w.size());
      for (size_t j = 0; j < w.size(); ++j) picks[j] = static_cast<int64_t>(j);
    } else {
      std::uniform_int_distribution<int64_t> dist(0, static_cast<int64_t>(w.size()) - 1);
      for (int j = 0; j < max_entries_per_tensor; ++j) picks.push_back(dist(rng));
    }
    for (int64_t j : picks) {
      const T saved = w[static_cast<size_t>(j)];
      const double h = eps * (1.0 + std::abs(static_cast<double>(saved)));
      w[static_cast<size_t>(j)] = static_cast<T>(static_cast<double>(saved) + h);
      const double f_plus = static_cast<double>(build_loss().value());
      w[static_cast<size_t>(j)] = static_cast<T>(static_cast<double>(saved) - h);
      const double f_minus = static_cast<double>(build_loss().value());
      w[static_cast<size_t>(j)] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double ad = static_cast<double>(analytic[pi][static_cast<size_t>(j)]);
      const double diff = std::abs(ad - fd);
      if (diff <= abs_floor) continue;
      worst = std::max(worst, diff / std::max(1.0, std::max(std::abs(ad), std::abs(fd))));
    }
  }
  return worst;
}

}  // namespace sovmas

#endif  // SOVMAS_OPTIM_HPP
