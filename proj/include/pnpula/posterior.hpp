#pragma once

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "pnpula/errors.hpp"
#include "pnpula/operators.hpp"

namespace pnpula {

enum class SolveMethod { automatic, spectral, diagonal, conjugate_gradient };

struct SolverConfig {
  SolveMethod method = SolveMethod::automatic;
  double cg_tol = 1e-8;    // relative residual
  int cg_max_iterations = 500;

  void validate() const {
    if (!(cg_tol > 0.0)) throw ConfigError("cg tolerance must be positive");
    if (cg_max_iterations < 1) throw ConfigError("cg max iterations must be >= 1");
  }
};

namespace detail {

inline SolveMethod resolve_method(const LinearOperator& op, SolveMethod m) {
  if (m != SolveMethod::automatic) return m;
  switch (op.kind()) {
    case LinearOperator::Kind::blur: return SolveMethod::spectral;
    case LinearOperator::Kind::mask: return SolveMethod::diagonal;
    case LinearOperator::Kind::downsample: return SolveMethod::conjugate_gradient;
  }
  return SolveMethod::conjugate_gradient;
}

// rhs = A^T y / sigma^2 + z / rho
inline ImageTensor solve_rhs(const Observation& obs, const ImageTensor& z,
                             double rho) {
  ImageTensor rhs = adjoint(obs.op, obs.y);
  rhs *= 1.0 / (obs.sigma * obs.sigma);
  rhs.axpy(1.0 / rho, z);
  return rhs;
}

inline ImageTensor apply_sigma_rho(const Observation& obs, double rho,
                                   const ImageTensor& v) {
  ImageTensor out = adjoint(obs.op, apply(obs.op, v));
  out *= 1.0 / (obs.sigma * obs.sigma);
  out.axpy(1.0 / rho, v);
  return out;
}

// Exact Fourier solve for circulant Sigma_rho (blur operator).
inline ImageTensor solve_blur_spectral(const Observation& obs, const ImageTensor& z,
                                       double rho) {
  const double inv_s2 = 1.0 / (obs.sigma * obs.sigma);
  const auto& khat = obs.op.spectrum();
  ImageTensor out = ImageTensor::zeros_like(z);
  for (int c = 0; c < z.channels(); ++c) {
    auto yhat = fft2(obs.y, c);
    auto zhat = fft2(z, c);
    for (size_t i = 0; i < yhat.size(); ++i) {
      const std::complex<double> num =
          std::conj(khat[i]) * yhat[i] * inv_s2 + zhat[i] / rho;
      const double den = std::norm(khat[i]) * inv_s2 + 1.0 / rho;
      yhat[i] = num / den;
    }
    ifft2_into(yhat, out, c);
  }
  return out;
}

inline ImageTensor solve_mask_diagonal(const Observation& obs, const ImageTensor& z,
                                       double rho) {
  const double inv_s2 = 1.0 / (obs.sigma * obs.sigma);
  const ImageTensor& m = obs.op.keep_map();
  ImageTensor out = ImageTensor::zeros_like(z);
  for (int c = 0; c < z.channels(); ++c)
    for (int y = 0; y < z.height(); ++y)
      for (int x = 0; x < z.width(); ++x) {
        const double keep = m(0, y, x);
        out(c, y, x) = (keep * obs.y(c, y, x) * inv_s2 + z(c, y, x) / rho) /
                       (keep * inv_s2 + 1.0 / rho);
      }
  return out;
}

// Closed-form solve for the downsample operator. Decimation aliases each
// group of f^2 frequencies onto one another, so Sigma_rho block-diagonalises
// into (rank-1 + I/rho) blocks that Sherman-Morrison inverts exactly.
inline ImageTensor solve_downsample_coset(const Observation& obs,
                                          const ImageTensor& z, double rho) {
  const int h = obs.op.input_height(), w = obs.op.input_width();
  const int f = obs.op.factor();
  const int bh = h / f, bw = w / f;
  const auto& khat = obs.op.spectrum();
  const double inv_sf = 1.0 / (obs.sigma * static_cast<double>(f));
  ImageTensor rhs = solve_rhs(obs, z, rho);
  ImageTensor out = ImageTensor::zeros_like(z);
  std::vector<std::complex<double>> v(static_cast<size_t>(f) * f);
  std::vector<std::complex<double>> b(v.size());
  for (int c = 0; c < z.channels(); ++c) {
    auto bhat = fft2(rhs, c);
    auto xhat = bhat;  // same layout; overwritten class by class
    for (int u0 = 0; u0 < bh; ++u0)
      for (int v0 = 0; v0 < bw; ++v0) {
        double vtv = 0.0;
        std::complex<double> vtb = 0.0;
        for (int a = 0; a < f; ++a)
          for (int bb = 0; bb < f; ++bb) {
            const size_t idx =
                static_cast<size_t>(u0 + a * bh) * w + (v0 + bb * bw);
            const size_t j = static_cast<size_t>(a) * f + bb;
            v[j] = std::conj(khat[idx]) * inv_sf;
            b[j] = bhat[idx];
            vtv += std::norm(v[j]);
            vtb += std::conj(v[j]) * b[j];
          }
        const std::complex<double> corr = rho * rho * vtb / (1.0 + rho * vtv);
        for (int a = 0; a < f; ++a)
          for (int bb = 0; bb < f; ++bb) {
            const size_t idx =
                static_cast<size_t>(u0 + a * bh) * w + (v0 + bb * bw);
            const size_t j = static_cast<size_t>(a) * f + bb;
            xhat[idx] = rho * b[j] - corr * v[j];
          }
      }
    ifft2_into(xhat, out, c);
  }
  return out;
}

inline ImageTensor solve_cg(const Observation& obs, const ImageTensor& z,
                            double rho, const SolverConfig& cfg) {
  const ImageTensor rhs = solve_rhs(obs, z, rho);
  const double rhs_norm = l2_norm(rhs);
  ImageTensor x = z;  // warm start at the latent iterate
  ImageTensor r = rhs - apply_sigma_rho(obs, rho, x);
  ImageTensor p = r;
  double rr = dot(r, r);
  if (rhs_norm == 0.0) return ImageTensor::zeros_like(z);
  for (int it = 0; it < cfg.cg_max_iterations; ++it) {
    if (std::sqrt(rr) <= cfg.cg_tol * rhs_norm) return x;
    ImageTensor ap = apply_sigma_rho(obs, rho, p);
    const double alpha = rr / dot(p, ap);
    x.axpy(alpha, p);
    r.axpy(-alpha, ap);
    const double rr_next = dot(r, r);
    p *= rr_next / rr;
    p += r;
    rr = rr_next;
  }
  const double rel = std::sqrt(rr) / rhs_norm;
  if (rel <= cfg.cg_tol) return x;
  throw SolverError("conjugate gradient did not reach tolerance " +
                        std::to_string(cfg.cg_tol) + " (relative residual " +
                        std::to_string(rel) + ")",
                    rel);
}

}  // namespace detail

// X_bar = (A^T A / sigma^2 + I/rho)^{-1} (A^T y / sigma^2 + z / rho),
// the conditional mean of x given (z, y, rho) under the splitting model.
inline ImageTensor posterior_x_mean(const Observation& obs, const ImageTensor& z,
                                    double rho, const SolverConfig& cfg = {}) {
  if (!(rho > 0.0)) throw ConfigError("rho must be positive");
  if (!(obs.sigma > 0.0))
    throw ConfigError("posterior solve requires a positive noise level");
  cfg.validate();
  obs.op.check_input(z);
  switch (detail::resolve_method(obs.op, cfg.method)) {
    case SolveMethod::spectral:
      if (obs.op.kind() == LinearOperator::Kind::blur)
        return detail::solve_blur_spectral(obs, z, rho);
      if (obs.op.kind() == LinearOperator::Kind::downsample)
        return detail::solve_downsample_coset(obs, z, rho);
      return detail::solve_mask_diagonal(obs, z, rho);  // mask is pointwise
    case SolveMethod::diagonal:
      if (obs.op.kind() != LinearOperator::Kind::mask)
        throw ConfigError("diagonal solve is only exact for mask operators");
      return detail::solve_mask_diagonal(obs, z, rho);
    case SolveMethod::conjugate_gradient:
      return detail::solve_cg(obs, z, rho, cfg);
    case SolveMethod::automatic:
      break;
  }
  throw ConfigError("unreachable solver method");
}

// Exact diagonal of Sigma_rho^{-1} = (A^T A / sigma^2 + I/rho)^{-1}; this is
// the pixelwise conditional variance of x given (z, y, rho), used by the
// Rao-Blackwellised second-moment estimator and the posterior std map.
inline ImageTensor posterior_var_diag(const Observation& obs, double rho,
                                      int channels = 1) {
  if (!(rho > 0.0)) throw ConfigError("rho must be positive");
  if (!(obs.sigma > 0.0))
    throw ConfigError("posterior variance requires a positive noise level");
  const double inv_s2 = 1.0 / (obs.sigma * obs.sigma);
  const int h = obs.op.input_height(), w = obs.op.input_width();
  ImageTensor out(channels, h, w);
  switch (obs.op.kind()) {
    case LinearOperator::Kind::mask: {
      const ImageTensor& m = obs.op.keep_map();
      for (int c = 0; c < channels; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            out(c, y, x) = 1.0 / (m(0, y, x) * inv_s2 + 1.0 / rho);
      return out;
    }
    case LinearOperator::Kind::blur: {
      // circulant inverse: constant diagonal, the mean of 1/eigenvalues
      const auto& khat = obs.op.spectrum();
      double acc = 0.0;
      for (const auto& k : khat) acc += 1.0 / (std::norm(k) * inv_s2 + 1.0 / rho);
      out.fill(acc / static_cast<double>(khat.size()));
      return out;
    }
    case LinearOperator::Kind::downsample: {
      // Block inverse rho*I - rho^2 v v^H / (1 + rho |v|^2); collapsing the
      // Fourier sum leaves a diagonal that is periodic with period f.
      const int f = obs.op.factor();
      const int bh = h / f, bw = w / f;
      const auto& khat = obs.op.spectrum();
      const double inv_sf = 1.0 / (obs.sigma * static_cast<double>(f));
      const double d = static_cast<double>(h) * w;
      std::vector<double> residue(static_cast<size_t>(f) * f, 0.0);
      std::vector<std::complex<double>> v(static_cast<size_t>(f) * f);
      for (int u0 = 0; u0 < bh; ++u0)
        for (int v0 = 0; v0 < bw; ++v0) {
          double vtv = 0.0;
          for (int a = 0; a < f; ++a)
            for (int bb = 0; bb < f; ++bb) {
              const size_t idx =
                  static_cast<size_t>(u0 + a * bh) * w + (v0 + bb * bw);
              v[static_cast<size_t>(a) * f + bb] = std::conj(khat[idx]) * inv_sf;
              vtv += std::norm(khat[idx]) * inv_sf * inv_sf;
            }
          const double gain = rho * rho / (1.0 + rho * vtv);
          for (int ry = 0; ry < f; ++ry)
            for (int rx = 0; rx < f; ++rx) {
              std::complex<double> s = 0.0;
              for (int a = 0; a < f; ++a)
                for (int bb = 0; bb < f; ++bb) {
                  const double phase =
                      2.0 * std::numbers::pi * (a * ry + bb * rx) / f;
                  s += v[static_cast<size_t>(a) * f + bb] *
                       std::complex<double>(std::cos(phase), std::sin(phase));
                }
              residue[static_cast<size_t>(ry) * f + rx] += gain * std::norm(s);
            }
        }
      for (int c = 0; c < channels; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            out(c, y, x) = rho - residue[static_cast<size_t>(y % f) * f + x % f] / d;
      return out;
    }
  }
  throw ConfigError("unreachable operator kind");
}

}  // namespace pnpula
