#pragma once

// Hyperpriors for the disease-mapping models and the BYM2 covariance
//   Var(x | tau) = tau^{-1} ((1 - phi) I + phi Q_*^-),
// where Q_*^- is the generalized inverse of the scaled structure matrix
// (unit diagonal on singletons).

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "icar/car_model.hpp"
#include "icar/error.hpp"
#include "icar/scaler.hpp"

namespace icar {

struct PcPriorSpec {
  double u = 1.0;
  double tail_prob = 0.01;

  void validate() const {
    require(u > 0.0 && std::isfinite(u), "pc prior: U must be positive");
    require(tail_prob > 0.0 && tail_prob < 1.0, "pc prior: tail probability must lie in (0, 1)");
  }
};

struct GammaPriorSpec {
  double shape = 1.0;
  double rate = 5e-5;
};

// ---- precision -----------------------------------------------------------

// Exponential prior on sigma = tau^{-1/2} with P(sigma > u) = tail_prob,
// i.e. pi(tau) = lambda/2 tau^{-3/2} exp(-lambda tau^{-1/2}).
inline double pc_prec_rate(const PcPriorSpec& spec) {
  spec.validate();
  return -std::log(spec.tail_prob) / spec.u;
}

inline double pc_prior_precision_logpdf(double tau, const PcPriorSpec& spec) {
  require(tau > 0.0 && std::isfinite(tau), "pc.prec: tau must be positive");
  const double lambda = pc_prec_rate(spec);
  return std::log(0.5 * lambda) - 1.5 * std::log(tau) - lambda / std::sqrt(tau);
}

// P(tau < t) = P(sigma > t^{-1/2}).
inline double pc_prior_precision_cdf(double tau, const PcPriorSpec& spec) {
  require(tau >= 0.0, "pc.prec: tau must be non-negative");
  if (tau == 0.0) return 0.0;
  return std::exp(-pc_prec_rate(spec) / std::sqrt(tau));
}

// ---- gamma ---------------------------------------------------------------

inline double gamma_prior_logpdf(double kappa, double shape, double rate) {
  require(kappa > 0.0 && shape > 0.0 && rate > 0.0, "gamma prior: arguments must be positive");
  return (shape - 1.0) * std::log(kappa) - rate * kappa + shape * std::log(rate) - std::lgamma(shape);
}

inline double gamma_prior_logpdf(double kappa, const GammaPriorSpec& g) {
  return gamma_prior_logpdf(kappa, g.shape, g.rate);
}

// ---- BYM2 ----------------------------------------------------------------

struct Bym2Spec {
  ScaledCarModel scaled_model;
  std::vector<double> gen_inv_diag;  // diag(Q_*^-), 1 on singletons
  std::vector<double> eigenvalues;   // non-null spectrum of Q_*^-, 1 per singleton
  std::vector<Eigen::MatrixXd> component_pinv;  // Q_*^- block per component (1x1 [1] for singletons)
  std::size_t null_directions = 0;              // one per component of size > 1
};

inline Bym2Spec make_bym2_spec(const ScaledCarModel& model) {
  require(model.scaled, "BYM2 needs a scaled model");
  Bym2Spec b;
  b.scaled_model = model;
  b.gen_inv_diag.assign(model.size(), 1.0);
  const auto& p = model.partition;
  for (std::size_t k = 0; k < p.count(); ++k) {
    const auto nodes = p.members(k);
    if (nodes.size() == 1) {
      b.eigenvalues.push_back(1.0);
      b.component_pinv.push_back(Eigen::MatrixXd::Ones(1, 1));
      continue;
    }
    ++b.null_directions;
    const auto spec = detail::component_spectrum(model.scaled_R.dense_block(nodes));
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(spec.eigenvalues.size());
    for (Eigen::Index j = 0; j < spec.eigenvalues.size(); ++j) {
      if (spec.eigenvalues[j] > spec.null_tol) {
        inv[j] = 1.0 / spec.eigenvalues[j];
        b.eigenvalues.push_back(inv[j]);
      }
    }
    Eigen::MatrixXd pinv = spec.eigenvectors * inv.asDiagonal() * spec.eigenvectors.transpose();
    for (std::size_t a = 0; a < nodes.size(); ++a) b.gen_inv_diag[nodes[a]] = pinv(Eigen::Index(a), Eigen::Index(a));
    b.component_pinv.push_back(std::move(pinv));
  }
  return b;
}

// Dense Q_*^- assembled from its component blocks.
inline Eigen::MatrixXd generalized_inverse(const Bym2Spec& spec) {
  const auto n = static_cast<Eigen::Index>(spec.scaled_model.size());
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  const auto& p = spec.scaled_model.partition;
  for (std::size_t k = 0; k < p.count(); ++k) {
    const auto nodes = p.members(k);
    for (std::size_t a = 0; a < nodes.size(); ++a)
      for (std::size_t c = 0; c < nodes.size(); ++c)
        q(Eigen::Index(nodes[a]), Eigen::Index(nodes[c])) = spec.component_pinv[k](Eigen::Index(a), Eigen::Index(c));
  }
  return q;
}

inline Eigen::MatrixXd bym2_covariance(double phi, double tau, const Bym2Spec& spec) {
  require(phi >= 0.0 && phi <= 1.0, "bym2_covariance: phi must lie in [0, 1]");
  require(tau > 0.0 && std::isfinite(tau), "bym2_covariance: tau must be positive");
  const auto n = static_cast<Eigen::Index>(spec.scaled_model.size());
  const Eigen::MatrixXd mix = (1.0 - phi) * Eigen::MatrixXd::Identity(n, n) + phi * generalized_inverse(spec);
  return mix / tau;
}

// ---- mixing parameter ----------------------------------------------------

// PC prior on phi: exponential(lambda) on d(phi) = sqrt(2 KLD(phi)), with
// lambda chosen so that P(phi < U) = tail_prob after normalizing on [0, 1].
//
// KLD is taken between N(0, (1 - phi) I + phi Q_*^-) and N(0, I). Each
// constrained component keeps one null direction of Q_*^-, where the
// mixture variance is 1 - phi; these enter with gamma = 0, so d(1) is
// infinite. Integrals run over s = -log(1 - phi), which keeps the mass
// piled up near phi = 1 resolvable.
class PcPhiPrior {
 public:
  static constexpr double fd_step = 1e-5;

  PcPhiPrior(const PcPriorSpec& spec, const Bym2Spec& bym2)
      : PcPhiPrior(spec, bym2.eigenvalues, bym2.null_directions) {}

  PcPhiPrior(const PcPriorSpec& spec, std::vector<double> gammas, std::size_t null_directions = 0)
      : spec_(spec), gammas_(std::move(gammas)), nulls_(double(null_directions)) {
    spec_.validate();
    require(spec_.u < 1.0, "pc.phi: U must lie in (0, 1)");
    solve_rate();
  }

  double kld(double phi) const {
    if (phi >= 1.0) return nulls_ > 0.0 ? std::numeric_limits<double>::infinity() : kld_s(phi, 0.0, false);
    return kld_s(phi, -std::log1p(-phi), true);
  }

  double distance(double phi) const { return std::sqrt(2.0 * std::max(kld(phi), 0.0)); }

  // Centered differences in phi, one-sided within one step of the boundary.
  double distance_derivative(double phi) const {
    const double h = fd_step;
    if (phi < h) return (distance(phi + h) - distance(phi)) / h;
    if (phi > 1.0 - h) return (distance(phi) - distance(phi - h)) / h;
    return (distance(phi + h) - distance(phi - h)) / (2.0 * h);
  }

  double rate() const { return lambda_; }
  double normalizer() const { return norm_; }
  std::size_t null_directions() const { return std::size_t(nulls_); }

  double logpdf(double phi) const {
    if (!(phi > 0.0 && phi < 1.0)) throw InputError("pc.phi: phi must lie in (0, 1)");
    const double s = -std::log1p(-phi);
    return log_density_s(lambda_, s) + s - std::log(norm_);
  }

  double pdf(double phi) const { return std::exp(logpdf(phi)); }

  // Log density of t = logit(phi); stable for large |t|.
  double logpdf_logit(double t) const {
    require(std::isfinite(t), "pc.phi: logit(phi) must be finite");
    const double s = softplus(t);      // -log(1 - phi)
    const double log_phi = -softplus(-t);
    return log_density_s(lambda_, s) + log_phi - std::log(norm_);
  }

  // Integral of the normalized density over [a, b].
  double probability(double a, double b) const { return integrate(lambda_, a, b) / norm_; }

  const PcPriorSpec& spec() const { return spec_; }

 private:
  static double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

  // phi and s = -log(1 - phi) passed together so neither loses precision.
  double kld_s(double phi, double s, bool finite_s) const {
    double acc = 0.0;
    for (double g : gammas_) {
      const double t = phi * (g - 1.0);
      acc += t - std::log1p(t);
    }
    if (nulls_ > 0.0 && finite_s) acc += nulls_ * (s - phi);
    return 0.5 * acc;
  }

  double distance_s(double s) const {
    return std::sqrt(2.0 * std::max(kld_s(-std::expm1(-s), s, true), 0.0));
  }

  double distance_derivative_s(double s) const {
    const double h = fd_step * std::max(1.0, s);
    if (s < h) return (distance_s(s + h) - distance_s(s)) / h;
    return (distance_s(s + h) - distance_s(s - h)) / (2.0 * h);
  }

  // log of lambda exp(-lambda d) |dd/ds|, the density of s.
  double log_density_s(double lambda, double s) const {
    return std::log(lambda) - lambda * distance_s(s) + std::log(std::abs(distance_derivative_s(s)));
  }

  double density_s(double lambda, double s) const {
    const double d = distance_s(s);
    if (!std::isfinite(d)) return 0.0;
    return lambda * std::exp(-lambda * d) * std::abs(distance_derivative_s(s));
  }

  double integrate(double lambda, double a, double b) const {
    using boost::math::quadrature::exp_sinh;
    using boost::math::quadrature::gauss_kronrod;
    auto f = [&](double s) { return density_s(lambda, s); };
    const double sa = -std::log1p(-a);
    if (b < 1.0) return gauss_kronrod<double, 31>::integrate(f, sa, -std::log1p(-b), 12, 1e-9);
    if (nulls_ == 0.0) return gauss_kronrod<double, 31>::integrate(f, sa, 40.0, 12, 1e-9);
    const double split = std::max(sa, 8.0);
    double head = sa < split ? gauss_kronrod<double, 31>::integrate(f, sa, split, 12, 1e-9) : 0.0;
    // s = split + r^2 flattens the sqrt(s) decay of d
    exp_sinh<double> tail;
    return head + tail.integrate([&](double r) { return 2.0 * r * f(split + r * r); }, 1e-10);
  }

  void solve_rate() {
    if (!(distance(spec_.u) > 0.0)) throw NumericalError("pc.phi: degenerate spectrum, distance is identically zero");
    auto excess = [&](double log_lambda) {
      const double lambda = std::exp(log_lambda);
      return integrate(lambda, 0.0, spec_.u) / integrate(lambda, 0.0, 1.0) - spec_.tail_prob;
    };
    const double guess = -std::log1p(-spec_.tail_prob) / distance(spec_.u);
    double lo = std::log(std::clamp(guess * 1e-2, 1e-8, 1e4)), hi = std::log(std::clamp(guess * 1e2, 1e-8, 1e4));
    if (!(excess(lo) < 0.0 && excess(hi) > 0.0))
      throw NumericalError("pc.phi: no positive rate satisfies P(phi < U) = tail probability for this graph");
    std::uintmax_t iters = 200;
    auto tol = [](double a, double b) { return std::abs(b - a) < 1e-12; };
    const auto [a, b] = boost::math::tools::bisect(excess, lo, hi, tol, iters);
    if (iters >= 200) throw NumericalError("pc.phi: rate root finding did not converge");
    lambda_ = std::exp(0.5 * (a + b));
    norm_ = integrate(lambda_, 0.0, 1.0);
  }

  PcPriorSpec spec_;
  std::vector<double> gammas_;
  double nulls_ = 0.0;
  double lambda_ = 0.0;
  double norm_ = 1.0;
};

inline double pc_prior_phi_logpdf(double phi, const PcPriorSpec& spec, const Bym2Spec& bym2) {
  return PcPhiPrior(spec, bym2).logpdf(phi);
}

}  // namespace icar
