#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>

#include "pnpula/errors.hpp"
#include "pnpula/operators.hpp"
#include "pnpula/tensor.hpp"

namespace pnpula {

// Fully Gaussian instantiation of the splitting model, used as an exact
// oracle: z ~ N(mu, tau2 I), x | z ~ N(z, rho I), y | x ~ N(Ax, sigma^2 I).
// Everything here runs dense linear algebra on purpose and is restricted to
// desk scale; these routines exist to verify, not to scale.
struct GaussianConjugateModel {
  LinearOperator op;
  double sigma = 0.0;
  ImageTensor prior_mean;
  double prior_var = 0.0;  // tau^2
  double rho = 0.0;

  void validate() const {
    if (!(sigma > 0.0 && prior_var > 0.0 && rho > 0.0))
      throw ConfigError("conjugate model needs sigma, prior_var, rho > 0");
  }
};

namespace detail {

constexpr long kDenseOracleMaxPixels = 32 * 32;

inline void check_desk_scale(long pixels) {
  if (pixels > kDenseOracleMaxPixels)
    throw ConfigError(
        "dense oracle is restricted to images up to 32x32; subsample to a "
        "grid of that size first");
}

}  // namespace detail

inline Eigen::VectorXd to_vector(const ImageTensor& img) {
  Eigen::VectorXd v(img.size());
  for (long i = 0; i < img.size(); ++i) v[i] = img.data()[i];
  return v;
}

inline ImageTensor from_vector(const Eigen::VectorXd& v, int channels, int height,
                               int width) {
  ImageTensor img(channels, height, width);
  for (long i = 0; i < img.size(); ++i) img.data()[i] = v[i];
  return img;
}

// Assembles A column by column through apply(); desk scale only.
inline Eigen::MatrixXd dense_operator_matrix(const LinearOperator& op,
                                             int channels = 1) {
  const long h = op.input_height(), w = op.input_width();
  detail::check_desk_scale(h * w);
  ImageTensor basis(channels, static_cast<int>(h), static_cast<int>(w));
  const long d = basis.size();
  const long n = apply(op, basis).size();
  Eigen::MatrixXd a(n, d);
  for (long j = 0; j < d; ++j) {
    basis.fill(0.0);
    basis.data()[j] = 1.0;
    const ImageTensor col = apply(op, basis);
    for (long i = 0; i < n; ++i) a(i, j) = col.data()[i];
  }
  return a;
}

// Posterior mean of x given y with z marginalised: the effective prior on x
// is N(mu, (tau2 + rho) I), so the mean solves
//   (A^T A / sigma^2 + I/(tau2+rho)) x = A^T y / sigma^2 + mu/(tau2+rho).
inline ImageTensor conjugate_posterior_mean(const GaussianConjugateModel& m,
                                            const ImageTensor& y) {
  m.validate();
  m.op.check_output(y);
  const Eigen::MatrixXd a = dense_operator_matrix(m.op, m.prior_mean.channels());
  const double inv_s2 = 1.0 / (m.sigma * m.sigma);
  const double inv_pv = 1.0 / (m.prior_var + m.rho);
  const Eigen::MatrixXd lhs =
      inv_s2 * (a.transpose() * a) +
      inv_pv * Eigen::MatrixXd::Identity(a.cols(), a.cols());
  const Eigen::VectorXd rhs =
      inv_s2 * (a.transpose() * to_vector(y)) + inv_pv * to_vector(m.prior_mean);
  const Eigen::VectorXd x = lhs.ldlt().solve(rhs);
  return from_vector(x, m.prior_mean.channels(), m.op.input_height(),
                     m.op.input_width());
}

// log N(y; A mu, sigma^2 I + (tau2 + rho) A A^T) by dense Cholesky.
inline double marginal_log_likelihood_rho(const GaussianConjugateModel& m,
                                          const ImageTensor& y) {
  m.validate();
  m.op.check_output(y);
  detail::check_desk_scale(static_cast<long>(m.op.input_height()) *
                           m.op.input_width());
  const Eigen::MatrixXd a = dense_operator_matrix(m.op, m.prior_mean.channels());
  const long n = a.rows();
  const Eigen::MatrixXd cov =
      m.sigma * m.sigma * Eigen::MatrixXd::Identity(n, n) +
      (m.prior_var + m.rho) * (a * a.transpose());
  const Eigen::VectorXd r = to_vector(y) - a * to_vector(m.prior_mean);
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw SolverError("marginal covariance factorisation failed", 0.0);
  double log_det = 0.0;
  for (long i = 0; i < n; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  const double quad = r.dot(llt.solve(r));
  return -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) +
                 log_det + quad);
}

// Central differences, per coordinate: (f(p + h e_i) - f(p - h e_i)) / (2h).
inline ImageTensor fd_gradient(const std::function<double(const ImageTensor&)>& f,
                               const ImageTensor& point, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  ImageTensor grad = ImageTensor::zeros_like(point);
  ImageTensor probe = point;
  for (long i = 0; i < point.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double fp = f(probe);
    probe.data()[i] = orig - h;
    const double fm = f(probe);
    probe.data()[i] = orig;
    grad.data()[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

inline double fd_derivative(const std::function<double(double)>& f, double x,
                            double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace pnpula
