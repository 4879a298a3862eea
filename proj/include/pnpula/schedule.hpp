#pragma once

#include <cmath>
#include <vector>

#include "pnpula/errors.hpp"

namespace pnpula {

// The beta-ladder of a variance-preserving diffusion with its derived
// quantities: alpha_t = 1 - beta_t, alpha_bar_t = prod_{s<=t} alpha_s
// (alpha_bar_0 = 1), beta_tilde_t = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
// Accessors are 1-based in t to match the usual indexing.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta_v, alpha_v, alpha_bar_v, beta_tilde_v;

  double beta(int t) const { return beta_v[check(t)]; }
  double alpha(int t) const { return alpha_v[check(t)]; }
  double alpha_bar(int t) const { return alpha_bar_v[check(t)]; }
  double beta_tilde(int t) const { return beta_tilde_v[check(t)]; }

  // marginal noise variance of the lambda-parameterisation at step t:
  // (1 - alpha_bar_t) / alpha_bar_t
  double noise_variance(int t) const {
    const double ab = alpha_bar(t);
    return (1.0 - ab) / ab;
  }

 private:
  size_t check(int t) const {
    if (t < 1 || t > T) throw RangeError("schedule step out of range");
    return static_cast<size_t>(t - 1);
  }
};

inline NoiseSchedule build_schedule(int T, double beta_min = 1e-4,
                                    double beta_max = 0.02) {
  if (T < 1) throw ConfigError("schedule needs T >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw ConfigError("schedule requires 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_v.resize(T);
  s.alpha_v.resize(T);
  s.alpha_bar_v.resize(T);
  s.beta_tilde_v.resize(T);
  double bar = 1.0;  // alpha_bar_0
  for (int t = 1; t <= T; ++t) {
    const double frac = T > 1 ? static_cast<double>(t - 1) / (T - 1) : 0.0;
    const double beta = beta_min + frac * (beta_max - beta_min);
    const double prev_bar = bar;
    bar *= 1.0 - beta;
    s.beta_v[t - 1] = beta;
    s.alpha_v[t - 1] = 1.0 - beta;
    s.alpha_bar_v[t - 1] = bar;
    s.beta_tilde_v[t - 1] = beta * (1.0 - prev_bar) / (1.0 - bar);
  }
  return s;
}

enum class TimestepMode { cumulative_std, explicit_t };

// How to turn the denoiser noise level lambda into a chain length t_star.
// The explicit rule is the shipping default (t_star = 3); cumulative-std
// inverts the schedule's accumulated noise, reading lambda as a variance.
struct TimestepRule {
  TimestepMode mode = TimestepMode::explicit_t;
  int t_star = 3;
};

inline int timestep_for_noise(const NoiseSchedule& s, double lambda,
                              const TimestepRule& rule) {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (rule.mode == TimestepMode::explicit_t) {
    if (rule.t_star < 0 || rule.t_star > s.T)
      throw ConfigError("explicit t_star must lie in [0, T]");
    return rule.t_star;
  }
  for (int t = 1; t <= s.T; ++t)
    if (s.noise_variance(t) >= lambda) return t;
  throw RangeError("lambda exceeds the schedule's terminal noise variance");
}

}  // namespace pnpula
