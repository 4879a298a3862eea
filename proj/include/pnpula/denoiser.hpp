#pragma once

#include <cmath>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "pnpula/errors.hpp"
#include "pnpula/group.hpp"
#include "pnpula/rng.hpp"
#include "pnpula/schedule.hpp"
#include "pnpula/tensor.hpp"
#include "pnpula/tensor_io.hpp"

namespace pnpula {

// NFE accounting: one unit per score-backend evaluation. The counter is
// thread-local so each chain's total stays exact when several chains run
// concurrently; report assembly sums per-chain totals.
inline uint64_t& nfe_counter() {
  thread_local uint64_t count = 0;
  return count;
}
inline uint64_t nfe_total() { return nfe_counter(); }
inline void reset_nfe() { nfe_counter() = 0; }

// Noise predictor eps_theta(x, t) underlying the diffusion chain.
class ScoreBackend {
 public:
  virtual ~ScoreBackend() = default;
  virtual ImageTensor epsilon(const ImageTensor& x, int t) const = 0;
};

// Exact noise predictor when the data prior is N(mu, tau2 I): the step-t
// marginal is N(sqrt(ab)*mu, (ab*tau2 + 1 - ab) I), whose score gives
// eps(x,t) = sqrt(1-ab) (x - sqrt(ab) mu) / (ab tau2 + 1 - ab).
class AnalyticGaussianScore : public ScoreBackend {
 public:
  AnalyticGaussianScore(ImageTensor mu, double tau2, NoiseSchedule schedule)
      : mu_(std::move(mu)), tau2_(tau2), schedule_(std::move(schedule)) {
    if (!(tau2 > 0.0)) throw ConfigError("prior variance must be positive");
  }

  ImageTensor epsilon(const ImageTensor& x, int t) const override {
    x.check_same_shape(mu_);
    const double ab = schedule_.alpha_bar(t);
    const double marginal_var = ab * tau2_ + (1.0 - ab);
    ImageTensor out = x;
    out.axpy(-std::sqrt(ab), mu_);
    out *= std::sqrt(1.0 - ab) / marginal_var;
    return out;
  }

 private:
  ImageTensor mu_;
  double tau2_;
  NoiseSchedule schedule_;
};

class CallbackScore : public ScoreBackend {
 public:
  explicit CallbackScore(std::function<ImageTensor(const ImageTensor&, int)> fn)
      : fn_(std::move(fn)) {}
  ImageTensor epsilon(const ImageTensor& x, int t) const override {
    return fn_(x, t);
  }

 private:
  std::function<ImageTensor(const ImageTensor&, int)> fn_;
};

// File-exchange contract for an external inference runtime serving
// eps_theta: the input lands in <dir>/in.lrt1, the command runs with {in},
// {out} and {t} substituted, and the prediction is read back from
// <dir>/out.lrt1. Invocations are serialised.
class ExternalScoreBackend : public ScoreBackend {
 public:
  ExternalScoreBackend(std::string command_template, std::string exchange_dir)
      : command_(std::move(command_template)), dir_(std::move(exchange_dir)) {
    if (command_.find("{t}") == std::string::npos)
      throw ConfigError("score command template must reference {t}");
  }

  ImageTensor epsilon(const ImageTensor& x, int t) const override {
    std::lock_guard<std::mutex> lock(mu_);
    const std::string in_path = dir_ + "/in.lrt1";
    const std::string out_path = dir_ + "/out.lrt1";
    std::remove(out_path.c_str());
    write_lrt1(in_path, x);
    std::string cmd = command_;
    substitute(cmd, "{in}", in_path);
    substitute(cmd, "{out}", out_path);
    substitute(cmd, "{t}", std::to_string(t));
    if (std::system(cmd.c_str()) != 0)
      throw FileError("score backend command failed: " + cmd);
    ImageTensor out = read_lrt1_image(out_path);
    out.check_same_shape(x);
    return out;
  }

 private:
  static void substitute(std::string& s, const std::string& key,
                         const std::string& value) {
    for (size_t pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos))
      s.replace(pos, key.size(), value), pos += value.size();
  }

  std::string command_;
  std::string dir_;
  mutable std::mutex mu_;
};

// One reverse-diffusion transition at step t:
//   Psi(x) = (x - eta*beta_t/sqrt(1-alpha_bar_t) * eps(x,t)) / sqrt(alpha_t)
//            + sqrt(eta*beta_tilde_t) * noise.
// eta = 1 is the plain DDPM update; larger eta scales both the score pull
// and the injected noise. beta_tilde_1 = 0, so the final step is noiseless.
inline ImageTensor ddpm_step(const ScoreBackend& backend, const NoiseSchedule& s,
                             const ImageTensor& x, int t, double eta,
                             RngStream& rng) {
  if (t < 1 || t > s.T) throw RangeError("ddpm step out of schedule range");
  if (!(eta > 0.0)) throw ConfigError("eta must be positive");
  ImageTensor eps = backend.epsilon(x, t);
  ++nfe_counter();
  eps.check_same_shape(x);
  if (!all_finite(eps)) throw DivergenceError("score backend returned non-finite values", t, linf_norm(eps));
  ImageTensor out = x;
  out.axpy(-eta * s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t)), eps);
  out *= 1.0 / std::sqrt(s.alpha(t));
  const double noise_var = eta * s.beta_tilde(t);
  if (noise_var > 0.0) {
    const double sd = std::sqrt(noise_var);
    for (double& v : out) v += sd * rng.normal();
  }
  return out;
}

// Composition Psi_{beta_1} o ... o Psi_{beta_{t_star}} applied to x; exactly
// t_star score evaluations. t_star = 0 is the empty composition.
inline ImageTensor chain_denoise(const ScoreBackend& backend, const NoiseSchedule& s,
                                 const ImageTensor& x, int t_star, double eta,
                                 RngStream& rng) {
  if (t_star < 0 || t_star > s.T) throw RangeError("t_star out of schedule range");
  ImageTensor out = x;
  for (int t = t_star; t >= 1; --t) out = ddpm_step(backend, s, out, t, eta, rng);
  return out;
}

// A denoiser targeting Gaussian noise of variance lambda(). Implementations
// may be stochastic; callers needing determinism fix the RngStream.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual ImageTensor denoise(const ImageTensor& x, RngStream& rng) const = 0;
  virtual double lambda() const = 0;
};

// Exact MMSE denoiser for the prior N(mu, tau2 I) under noise variance
// lambda: the posterior mean (tau2*x + lambda*mu) / (tau2 + lambda).
inline ImageTensor analytic_gaussian_denoise(const ImageTensor& mu, double tau2,
                                             const ImageTensor& x, double lambda) {
  if (!(tau2 > 0.0)) throw ConfigError("prior variance must be positive");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  x.check_same_shape(mu);
  ImageTensor out = x;
  out *= tau2 / (tau2 + lambda);
  out.axpy(lambda / (tau2 + lambda), mu);
  return out;
}

class AnalyticGaussianDenoiser : public Denoiser {
 public:
  AnalyticGaussianDenoiser(ImageTensor mu, double tau2, double lambda)
      : mu_(std::move(mu)), tau2_(tau2), lambda_(lambda) {
    if (!(tau2 > 0.0)) throw ConfigError("prior variance must be positive");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  }

  ImageTensor denoise(const ImageTensor& x, RngStream&) const override {
    return analytic_gaussian_denoise(mu_, tau2_, x, lambda_);
  }
  double lambda() const override { return lambda_; }
  const ImageTensor& mu() const { return mu_; }
  double tau2() const { return tau2_; }

 private:
  ImageTensor mu_;
  double tau2_;
  double lambda_;
};

class DdpmChainDenoiser : public Denoiser {
 public:
  DdpmChainDenoiser(std::shared_ptr<const ScoreBackend> backend,
                    NoiseSchedule schedule, double eta, double lambda,
                    TimestepRule rule = {})
      : backend_(std::move(backend)),
        schedule_(std::move(schedule)),
        eta_(eta),
        lambda_(lambda),
        t_star_(timestep_for_noise(schedule_, lambda, rule)) {
    if (!backend_) throw ConfigError("chain denoiser needs a score backend");
    if (!(eta > 0.0)) throw ConfigError("eta must be positive");
  }

  ImageTensor denoise(const ImageTensor& x, RngStream& rng) const override {
    return chain_denoise(*backend_, schedule_, x, t_star_, eta_, rng);
  }
  double lambda() const override { return lambda_; }
  int t_star() const { return t_star_; }
  double eta() const { return eta_; }

 private:
  std::shared_ptr<const ScoreBackend> backend_;
  NoiseSchedule schedule_;
  double eta_;
  double lambda_;
  int t_star_;
};

// Conjugation by a uniformly drawn group element: T_g^{-1} D(T_g x). One
// group draw per call; averaging over calls makes the denoiser equivariant
// in expectation even when D is not.
class EquivariantDenoiser : public Denoiser {
 public:
  EquivariantDenoiser(std::shared_ptr<const Denoiser> inner,
                      std::vector<GroupElement> group)
      : inner_(std::move(inner)), group_(std::move(group)) {
    if (!inner_) throw ConfigError("equivariant wrapper needs an inner denoiser");
    if (group_.empty()) throw ConfigError("equivariant wrapper needs a non-empty group");
  }

  ImageTensor denoise(const ImageTensor& x, RngStream& rng) const override {
    const GroupElement g = sample_group(rng, group_);
    ImageTensor tx = transform(x, g, TransformDirection::forward);
    ImageTensor dtx = inner_->denoise(tx, rng);
    return transform(dtx, g, TransformDirection::inverse);
  }
  double lambda() const override { return inner_->lambda(); }
  const std::vector<GroupElement>& group() const { return group_; }

 private:
  std::shared_ptr<const Denoiser> inner_;
  std::vector<GroupElement> group_;
};

class CallbackDenoiser : public Denoiser {
 public:
  CallbackDenoiser(std::function<ImageTensor(const ImageTensor&)> fn, double lambda)
      : fn_(std::move(fn)), lambda_(lambda) {}
  ImageTensor denoise(const ImageTensor& x, RngStream&) const override {
    return fn_(x);
  }
  double lambda() const override { return lambda_; }

 private:
  std::function<ImageTensor(const ImageTensor&)> fn_;
  double lambda_;
};

// Plug-and-play score estimate (D_lambda(x) - x) / lambda.
inline ImageTensor score_from_denoiser(const Denoiser& d, const ImageTensor& x,
                                       double lambda, RngStream& rng) {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  ImageTensor out = d.denoise(x, rng);
  out -= x;
  out *= 1.0 / lambda;
  return out;
}

}  // namespace pnpula
