#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pnpula/errors.hpp"
#include "pnpula/tensor.hpp"

namespace pnpula {

// Stochastic-approximation calibration of the splitting parameter rho by
// maximum marginal likelihood, interleaved with the Langevin chain. The
// projection onto R_+ is realised as a clamp to [rho_min, rho_max]: rho -> 0
// makes the Sigma_rho solves and the 1/rho drift singular.
struct CalibratorConfig {
  enum class Averaging { last_iterate, tail_average };

  double rho0 = 0.1;
  double c0 = 0.0;          // 0 resolves to rho0 / d at run time
  double p = 0.85;          // decay exponent, in [0.6, 0.9]
  double rho_min = 1e-6;
  double rho_max = 10.0;
  double tol_rho = 1e-3;
  double tol_x = 1e-4;
  Averaging averaging = Averaging::tail_average;

  void validate() const {
    if (!(rho0 > 0.0)) throw ConfigError("rho0 must be positive");
    if (!(rho_min > 0.0 && rho_min <= rho_max))
      throw ConfigError("clamp bounds require 0 < rho_min <= rho_max");
    if (!(p >= 0.6 && p <= 0.9)) throw ConfigError("decay exponent p must lie in [0.6, 0.9]");
    if (!(tol_rho > 0.0 && tol_x > 0.0)) throw ConfigError("tolerances must be positive");
    if (c0 < 0.0) throw ConfigError("c0 must be non-negative");
  }

  double resolved_c0(long d) const { return c0 > 0.0 ? c0 : rho0 / static_cast<double>(d); }
};

struct RhoHistoryRow {
  long k = 0;
  double rho = 0.0;
  double gradient = 0.0;
  double step = 0.0;
};

struct CalibratorState {
  double rho = 0.0;
  double rho_bar = 0.0;       // running tail average (valid once tail_count > 0)
  long tail_count = 0;
  double prev_rho_bar = 0.0;  // tail average one update earlier
  std::vector<RhoHistoryRow> history;

  static CalibratorState init(const CalibratorConfig& cfg) {
    cfg.validate();
    CalibratorState st;
    st.rho = std::clamp(cfg.rho0, cfg.rho_min, cfg.rho_max);
    return st;
  }
};

// d/drho log N(x_bar; z, rho I) = ||x_bar - z||^2 / (2 rho^2) - d / (2 rho).
// The x|z factor is the only rho-dependent part of the joint density, so
// this is the full gradient of log p(x_bar, z | y, rho).
inline double rho_gradient(const ImageTensor& x_bar, const ImageTensor& z,
                           double rho, long d) {
  if (!(rho > 0.0)) throw ConfigError("rho must be positive");
  if (d != x_bar.size()) throw ShapeError("d must equal the pixel count of x_bar");
  x_bar.check_same_shape(z);
  double ss = 0.0;
  for (long i = 0; i < d; ++i) {
    const double r = x_bar.data()[i] - z.data()[i];
    ss += r * r;
  }
  return ss / (2.0 * rho * rho) - static_cast<double>(d) / (2.0 * rho);
}

// delta_k = c0 * k^{-p}; cfg.c0 must already be resolved (see resolved_c0).
inline double delta_step(long k, const CalibratorConfig& cfg) {
  if (k < 1) throw ConfigError("delta_step needs k >= 1");
  if (!(cfg.c0 > 0.0)) throw ConfigError("delta_step needs a resolved c0 > 0");
  return cfg.c0 * std::pow(static_cast<double>(k), -cfg.p);
}

// rho_{k+1} = clamp(rho_k + delta_{k+1} * grad); the tail average (the
// reported MMLE) starts accumulating once `in_tail` turns true, i.e. after
// the sampler's burn-in.
inline void sapg_update(CalibratorState& state, const ImageTensor& x_bar,
                        const ImageTensor& z, long k, const CalibratorConfig& base_cfg,
                        bool in_tail = true) {
  if (k < 1) throw ConfigError("sapg_update needs k >= 1");
  CalibratorConfig cfg = base_cfg;
  cfg.c0 = cfg.resolved_c0(x_bar.size());
  const double grad = rho_gradient(x_bar, z, state.rho, x_bar.size());
  const double delta = delta_step(k, cfg);
  const double next = std::clamp(state.rho + delta * grad, cfg.rho_min, cfg.rho_max);
  state.history.push_back({k, next, grad, delta});
  state.rho = next;
  if (in_tail) {
    state.prev_rho_bar = state.tail_count > 0 ? state.rho_bar : next;
    ++state.tail_count;
    state.rho_bar += (next - state.rho_bar) / static_cast<double>(state.tail_count);
  }
}

inline double calibrated_rho(const CalibratorState& state, const CalibratorConfig& cfg) {
  if (cfg.averaging == CalibratorConfig::Averaging::tail_average && state.tail_count > 0)
    return state.rho_bar;
  return state.rho;
}

struct Convergence {
  bool converged = false;
  std::string reason;
};

// Converged once both monitored relative errors sit below tolerance:
// |rho_bar_{k+1} - rho_bar_k| / rho_bar_k and the running-mean image change.
inline Convergence check_convergence(const CalibratorState& state,
                                     double x_rel_change,
                                     const CalibratorConfig& cfg) {
  if (state.tail_count < 2) return {false, "fewer than 2 recorded iterations"};
  const double rho_change =
      std::abs(state.rho_bar - state.prev_rho_bar) / std::abs(state.prev_rho_bar);
  if (rho_change > cfg.tol_rho)
    return {false, "rho average still moving (" + std::to_string(rho_change) + ")"};
  if (x_rel_change > cfg.tol_x)
    return {false, "posterior mean still moving (" + std::to_string(x_rel_change) + ")"};
  return {true, "rho and posterior-mean relative changes below tolerance"};
}

}  // namespace pnpula
