#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pnpula/denoiser.hpp"
#include "pnpula/errors.hpp"
#include "pnpula/metrics.hpp"
#include "pnpula/posterior.hpp"
#include "pnpula/rng.hpp"
#include "pnpula/sapg.hpp"

namespace pnpula {

enum class SamplerMode { latent, ambient };

struct SamplerConfig {
  double gamma = 0.0;            // step size, > 0
  double lambda = 1.5 / 255.0;   // denoiser noise variance
  long iterations = 100;
  double burn_in_fraction = 0.3;
  SamplerMode mode = SamplerMode::latent;
  SolverConfig solver;
  double divergence_linf = 1e3;  // abort threshold on ||Z||_inf
  double noise_scale = 1.0;      // 0 turns the chain into its gradient flow

  void validate() const {
    if (!(gamma > 0.0)) throw ConfigError("step size gamma must be positive");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
      throw ConfigError("burn-in fraction must lie in [0, 1)");
    solver.validate();
  }
};

// Mutable chain state: the latent iterate Z_k (the ambient X_k in ambient
// mode), the conditional mean X_bar_k, and the stream all randomness in the
// step is drawn from.
struct SamplerState {
  ImageTensor z;
  ImageTensor x_bar;
  long k = 0;
  RngStream rng;

  SamplerState(ImageTensor z0, ImageTensor x_bar0, RngStream stream)
      : z(std::move(z0)), x_bar(std::move(x_bar0)), k(0), rng(stream) {}
};

struct StepDiagnostics {
  double likelihood_drift_norm = 0.0;
  double prior_drift_norm = 0.0;
  double step_norm = 0.0;
};

// Recommended step size gamma = 0.5 / (1/lambda + L_y) with
// L_y = ||A||^2 / sigma^2 + 1/rho0 the likelihood-drift Lipschitz constant.
inline double default_step_size(double lambda, double op_norm, double sigma,
                                double rho0) {
  if (!(lambda > 0.0 && op_norm > 0.0 && sigma > 0.0 && rho0 > 0.0))
    throw ConfigError("default_step_size needs positive arguments");
  const double l_y = op_norm * op_norm / (sigma * sigma) + 1.0 / rho0;
  return 0.5 / (1.0 / lambda + l_y);
}

namespace detail {

inline void guard_iterate(const ImageTensor& z, long k, double limit) {
  if (!all_finite(z))
    throw DivergenceError("sampler iterate became non-finite", k,
                          std::numeric_limits<double>::infinity());
  const double n = linf_norm(z);
  if (n > limit)
    throw DivergenceError("sampler iterate exceeded the divergence guard", k, n);
}

}  // namespace detail

// One latent-space transition:
//   Z_{k+1} = Z_k + gamma (X_bar_k - Z_k)/rho + gamma (D(Z_k) - Z_k)/lambda
//             + sqrt(2 gamma) zeta,
//   X_bar_{k+1} = posterior_x_mean(obs, Z_{k+1}, rho).
// The likelihood drift uses the ascent direction (X_bar - Z)/rho, i.e. the
// gradient of log p(y|z; rho) via Fisher's identity.
inline void latent_step(SamplerState& state, const Observation& obs, double rho,
                        const Denoiser& d, const SamplerConfig& cfg,
                        StepDiagnostics* diag = nullptr) {
  if (!(rho > 0.0)) throw ConfigError("rho must be positive");
  const double gamma = cfg.gamma;
  ImageTensor lik = state.x_bar;
  lik -= state.z;
  lik *= 1.0 / rho;
  ImageTensor prior = d.denoise(state.z, state.rng);
  prior -= state.z;
  prior *= 1.0 / cfg.lambda;
  if (diag) {
    diag->likelihood_drift_norm = l2_norm(lik);
    diag->prior_drift_norm = l2_norm(prior);
  }
  ImageTensor next = state.z;
  next.axpy(gamma, lik);
  next.axpy(gamma, prior);
  if (cfg.noise_scale > 0.0) {
    const double sd = cfg.noise_scale * std::sqrt(2.0 * gamma);
    for (double& v : next) v += sd * state.rng.normal();
  }
  if (diag) diag->step_norm = l2_norm(next - state.z);
  detail::guard_iterate(next, state.k + 1, cfg.divergence_linf);
  state.z = std::move(next);
  state.x_bar = posterior_x_mean(obs, state.z, rho, cfg.solver);
  ++state.k;
}

// Ambient-space PnP-ULA (the rho = 0 ablation):
//   X_{k+1} = X_k + gamma grad log l_y(X_k) + gamma (D(X_k) - X_k)/lambda
//             + sqrt(2 gamma) zeta,
// with grad log l_y(x) = A^T (y - A x) / sigma^2. state.x_bar mirrors z.
inline void ambient_step(SamplerState& state, const Observation& obs,
                         const Denoiser& d, const SamplerConfig& cfg,
                         StepDiagnostics* diag = nullptr) {
  if (!(obs.sigma > 0.0)) throw ConfigError("ambient step requires sigma > 0");
  const double gamma = cfg.gamma;
  ImageTensor residual = obs.y - apply(obs.op, state.z);
  ImageTensor lik = adjoint(obs.op, residual);
  lik *= 1.0 / (obs.sigma * obs.sigma);
  ImageTensor prior = d.denoise(state.z, state.rng);
  prior -= state.z;
  prior *= 1.0 / cfg.lambda;
  if (diag) {
    diag->likelihood_drift_norm = l2_norm(lik);
    diag->prior_drift_norm = l2_norm(prior);
  }
  ImageTensor next = state.z;
  next.axpy(gamma, lik);
  next.axpy(gamma, prior);
  if (cfg.noise_scale > 0.0) {
    const double sd = cfg.noise_scale * std::sqrt(2.0 * gamma);
    for (double& v : next) v += sd * state.rng.normal();
  }
  if (diag) diag->step_norm = l2_norm(next - state.z);
  detail::guard_iterate(next, state.k + 1, cfg.divergence_linf);
  state.z = std::move(next);
  state.x_bar = state.z;
  ++state.k;
}

enum class RaoBlackwellStatistic { identity, second_moment };

// (1/K) sum_k E[phi(x) | y, Z_k, rho] with the closed-form Gaussian
// conditional: identity gives the posterior-mean estimate, second_moment the
// pixelwise E[x^2] (conditional mean squared plus conditional variance).
inline ImageTensor rao_blackwell_estimate(const std::vector<ImageTensor>& zs,
                                          const Observation& obs, double rho,
                                          RaoBlackwellStatistic phi =
                                              RaoBlackwellStatistic::identity,
                                          const SolverConfig& solver = {}) {
  if (zs.empty()) throw ConfigError("rao_blackwell_estimate needs samples");
  ImageTensor acc = ImageTensor::zeros_like(zs.front());
  std::optional<ImageTensor> var;
  for (const ImageTensor& z : zs) {
    ImageTensor x_bar = posterior_x_mean(obs, z, rho, solver);
    if (phi == RaoBlackwellStatistic::second_moment) {
      if (!var) var = posterior_var_diag(obs, rho, z.channels());
      for (long i = 0; i < x_bar.size(); ++i)
        x_bar.data()[i] = x_bar.data()[i] * x_bar.data()[i] + var->data()[i];
    }
    acc += x_bar;
  }
  acc *= 1.0 / static_cast<double>(zs.size());
  return acc;
}

struct TraceRow {
  long k = 0;
  double rho = 0.0;
  double likelihood_drift_norm = 0.0;
  double prior_drift_norm = 0.0;
  double step_norm = 0.0;
  double psnr_db = std::numeric_limits<double>::quiet_NaN();
};

struct SamplerRun {
  ImageTensor posterior_mean;
  ImageTensor posterior_std;
  std::vector<TraceRow> trace;
  double rho_hat = 0.0;
  bool calibrated = false;
  bool converged = false;
  long converged_at = -1;
  long retained = 0;
  uint64_t nfe = 0;
  bool diverged = false;
  long diverged_at = -1;
  std::string divergence_message;
};

struct RunOptions {
  const ImageTensor* ground_truth = nullptr;   // enables the PSNR trace column
  const CalibratorConfig* calibrator = nullptr;  // enables SAPG coupling
  bool compute_std = true;
};

// Runs the chain for cfg.iterations steps, discards the burn-in fraction and
// returns the Rao-Blackwellised average of the retained conditional means
// (plain sample average in ambient mode) together with per-iteration
// diagnostics. Divergence is reported in the result with the trace prefix
// preserved rather than thrown, so callers can dump the trace post-mortem.
inline SamplerRun run_sampler(const ImageTensor& z0, const Observation& obs,
                              double rho0, const Denoiser& d,
                              const SamplerConfig& cfg, RngStream rng,
                              const RunOptions& opts = {}) {
  cfg.validate();
  if (!(rho0 > 0.0)) throw ConfigError("rho0 must be positive");
  const uint64_t nfe_before = nfe_total();
  const long burn = static_cast<long>(std::floor(cfg.burn_in_fraction *
                                                 static_cast<double>(cfg.iterations)));
  const bool latent = cfg.mode == SamplerMode::latent;

  SamplerState state(z0, latent ? posterior_x_mean(obs, z0, rho0, cfg.solver) : z0,
                     rng);
  CalibratorState calib;
  if (opts.calibrator) calib = CalibratorState::init(*opts.calibrator);
  double rho = opts.calibrator ? calib.rho : rho0;

  SamplerRun run;
  run.trace.reserve(static_cast<size_t>(cfg.iterations));
  ImageTensor mean_acc = ImageTensor::zeros_like(z0);
  ImageTensor sq_acc = ImageTensor::zeros_like(z0);
  ImageTensor var_acc = ImageTensor::zeros_like(z0);
  long retained = 0;

  for (long k = 0; k < cfg.iterations; ++k) {
    StepDiagnostics diag;
    try {
      if (latent)
        latent_step(state, obs, rho, d, cfg, &diag);
      else
        ambient_step(state, obs, d, cfg, &diag);
    } catch (const DivergenceError& e) {
      run.diverged = true;
      run.diverged_at = e.iteration;
      run.divergence_message = e.what();
      break;
    }

    const bool in_tail = state.k > burn;
    double x_rel_change = std::numeric_limits<double>::infinity();
    if (in_tail) {
      ++retained;
      const ImageTensor& draw = state.x_bar;
      ImageTensor prev_mean = mean_acc;
      for (long i = 0; i < draw.size(); ++i) {
        mean_acc.data()[i] += (draw.data()[i] - mean_acc.data()[i]) / retained;
        sq_acc.data()[i] +=
            (draw.data()[i] * draw.data()[i] - sq_acc.data()[i]) / retained;
      }
      if (latent && opts.compute_std) {
        const ImageTensor var = posterior_var_diag(obs, rho, z0.channels());
        for (long i = 0; i < var.size(); ++i)
          var_acc.data()[i] += (var.data()[i] - var_acc.data()[i]) / retained;
      }
      if (retained > 1) {
        const double denom = l2_norm(prev_mean);
        if (denom > 0.0) x_rel_change = l2_norm(mean_acc - prev_mean) / denom;
      }
    }

    if (opts.calibrator) {
      sapg_update(calib, state.x_bar, state.z, state.k, *opts.calibrator, in_tail);
      rho = calib.rho;
      if (!run.converged) {
        const Convergence c = check_convergence(calib, x_rel_change, *opts.calibrator);
        if (c.converged) {
          run.converged = true;
          run.converged_at = state.k;
        }
      }
    }

    TraceRow row;
    row.k = state.k;
    row.rho = rho;
    row.likelihood_drift_norm = diag.likelihood_drift_norm;
    row.prior_drift_norm = diag.prior_drift_norm;
    row.step_norm = diag.step_norm;
    if (opts.ground_truth) row.psnr_db = psnr(state.x_bar, *opts.ground_truth);
    run.trace.push_back(row);
  }

  run.retained = retained;
  run.posterior_mean = retained > 0 ? mean_acc : state.x_bar;
  if (opts.compute_std && retained > 0) {
    run.posterior_std = ImageTensor::zeros_like(z0);
    for (long i = 0; i < mean_acc.size(); ++i) {
      const double second = sq_acc.data()[i] + (latent ? var_acc.data()[i] : 0.0);
      run.posterior_std.data()[i] =
          std::sqrt(std::max(0.0, second - mean_acc.data()[i] * mean_acc.data()[i]));
    }
  }
  if (opts.calibrator) {
    run.calibrated = true;
    run.rho_hat = calibrated_rho(calib, *opts.calibrator);
  } else {
    run.rho_hat = rho0;
  }
  run.nfe = nfe_total() - nfe_before;
  return run;
}

}  // namespace pnpula
