#pragma once

// MCMC for Poisson disease mapping with intrinsic CAR random effects:
//
//   y_i ~ Po(E_i r_i),  log r_i = alpha + beta' z_i + x_i,
//
// with x either a (scaled or unscaled) Besag field with precision kappa,
// or the BYM2 mixture x = (sqrt(1 - phi) v + sqrt(phi) u) / sqrt(tau).
//
// Structured effects live on the sum-to-zero subspace of every component
// of size > 1. Site proposals add delta * (e_i - 1/m) inside the
// component, so the constraint holds exactly along the whole chain.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "icar/car_model.hpp"
#include "icar/data.hpp"
#include "icar/error.hpp"
#include "icar/graph.hpp"
#include "icar/priors.hpp"
#include "icar/scaler.hpp"
#include "icar/summary.hpp"

namespace icar {

enum class ModelKind { besag_scaled, besag_unscaled, bym2 };
enum class Likelihood { poisson, gaussian };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::besag_scaled: return "besag-scaled";
    case ModelKind::besag_unscaled: return "besag-unscaled";
    case ModelKind::bym2: return "bym2";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "besag-scaled" || s == "besag_scaled") return ModelKind::besag_scaled;
  if (s == "besag-unscaled" || s == "besag_unscaled") return ModelKind::besag_unscaled;
  if (s == "bym2") return ModelKind::bym2;
  throw InputError("unknown model '" + s + "' (expected besag-scaled, besag-unscaled or bym2)");
}

struct AdaptationSettings {
  double scalar_target = 0.44;  // single-site and one-dimensional blocks
  double block_target = 0.234;  // multivariate blocks
  double initial_scale = 0.3;
  double decay = 0.6;  // Robbins-Monro step t^{-decay}
};

struct FitConfig {
  ModelKind model = ModelKind::besag_scaled;
  Likelihood likelihood = Likelihood::poisson;
  double gaussian_sd = 1.0;

  GammaPriorSpec kappa_prior{1.0, 5e-5};
  std::optional<PcPriorSpec> prec_prior;  // BYM2 tau
  std::optional<PcPriorSpec> phi_prior;   // BYM2 phi
  std::optional<double> fixed_kappa;
  std::optional<double> fixed_phi;

  bool intercept = true;
  bool per_component_intercepts = false;
  double fixed_effect_precision = 1e-6;

  std::size_t iterations = 200000;
  std::size_t burn_in = 50000;
  std::size_t thin = 10;
  std::uint64_t seed = 1;
  unsigned chains = 1;
  AdaptationSettings adaptation;
  ScaleOptions scale;
  bool keep_samples = false;
  std::size_t improper_iteration_cap = 20000;

  void validate() const {
    require(iterations > 0 && thin >= 1, "config: iterations and thin must be positive");
    require(burn_in < iterations, "config: burn_in must be smaller than iterations");
    require((iterations - burn_in) / thin >= 2, "config: fewer than two retained draws");
    require(chains >= 1, "config: need at least one chain");
    require(gaussian_sd > 0.0, "config: gaussian_sd must be positive");
    require(kappa_prior.shape > 0.0 && kappa_prior.rate > 0.0, "config: gamma prior needs positive shape and rate");
    if (fixed_kappa) require(*fixed_kappa > 0.0, "config: fixed kappa must be positive");
    if (model == ModelKind::bym2) {
      require(prec_prior.has_value(), "config: bym2 needs a pc.prec prior");
      require(phi_prior.has_value() || fixed_phi.has_value(), "config: bym2 needs a pc.phi prior");
      prec_prior->validate();
      if (phi_prior) phi_prior->validate();
      if (fixed_phi) require(*fixed_phi >= 0.0 && *fixed_phi <= 1.0, "config: fixed phi must lie in [0, 1]");
    }
  }
};

struct FitResult {
  std::vector<ParameterSummary> summaries;
  double dic = 0.0;
  double p_d = 0.0;
  double mean_deviance = 0.0;
  double deviance_at_mean = 0.0;
  std::map<std::string, double> acceptance_rates;
  std::vector<std::string> warnings;
  std::size_t retained = 0;
  std::uint64_t seed = 0;

  std::vector<std::string> sample_names;  // filled when keep_samples
  Eigen::MatrixXd samples;                // draws x parameters
  std::vector<double> deviance_draws;

  std::map<std::string, double> rhat;  // multi-chain runs only
  std::vector<std::map<std::string, double>> chain_means;

  const ParameterSummary& at(const std::string& name) const {
    for (const auto& s : summaries)
      if (s.name == name) return s;
    throw InputError("no summary for parameter '" + name + "'");
  }
};

struct DicResult {
  double dic = 0.0;
  double p_d = 0.0;
};

inline DicResult dic(const std::vector<double>& deviance_draws, double deviance_at_posterior_mean) {
  require(!deviance_draws.empty(), "dic: no deviance draws");
  const double mean = sample_mean(deviance_draws);
  const double p_d = mean - deviance_at_posterior_mean;
  return {mean + p_d, p_d};
}

// -2 log p(y | mu) for Poisson counts; log(y!) via lgamma.
inline double poisson_deviance(const std::vector<double>& y, const Eigen::VectorXd& mu) {
  double ll = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double m = mu[Eigen::Index(i)];
    ll += (y[i] > 0.0 ? y[i] * std::log(m) : 0.0) - m - std::lgamma(y[i] + 1.0);
  }
  return -2.0 * ll;
}

// ---- prior sampling ------------------------------------------------------

// Draws from the constrained prior: eigen-coordinates with variance
// 1/(kappa * eigenvalue) on the non-null directions of each scaled block,
// N(0, 1/kappa) on singletons.
class PriorSampler {
 public:
  explicit PriorSampler(const ScaledCarModel& model) : n_(model.size()) {
    const auto& p = model.partition;
    for (std::size_t k = 0; k < p.count(); ++k) {
      Block b;
      b.nodes = p.members(k);
      if (b.nodes.size() == 1) {
        if (!model.scaled) throw InputError("prior sampling: unscaled singleton has an improper prior");
        single_.push_back(b.nodes[0]);
        continue;
      }
      auto spec = detail::component_spectrum(model.scaled_R.dense_block(b.nodes));
      for (Eigen::Index j = 0; j < spec.eigenvalues.size(); ++j) {
        if (spec.eigenvalues[j] <= spec.null_tol) continue;
        b.sd.push_back(1.0 / std::sqrt(spec.eigenvalues[j]));
        b.vectors.push_back(spec.eigenvectors.col(j));
      }
      blocks_.push_back(std::move(b));
    }
  }

  template <class Rng>
  Eigen::VectorXd draw(double kappa, Rng& rng) const {
    require(kappa > 0.0, "prior sampling: kappa must be positive");
    std::normal_distribution<double> z;
    const double s = 1.0 / std::sqrt(kappa);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(Eigen::Index(n_));
    for (const auto& b : blocks_) {
      Eigen::VectorXd local = Eigen::VectorXd::Zero(Eigen::Index(b.nodes.size()));
      for (std::size_t j = 0; j < b.sd.size(); ++j) local += (s * b.sd[j] * z(rng)) * b.vectors[j];
      for (std::size_t a = 0; a < b.nodes.size(); ++a) x[Eigen::Index(b.nodes[a])] = local[Eigen::Index(a)];
    }
    for (std::size_t i : single_) x[Eigen::Index(i)] = s * z(rng);
    return x;
  }

 private:
  struct Block {
    std::vector<std::size_t> nodes;
    std::vector<double> sd;
    std::vector<Eigen::VectorXd> vectors;
  };
  std::size_t n_;
  std::vector<Block> blocks_;
  std::vector<std::size_t> single_;
};

// `count` draws as rows.
inline Eigen::MatrixXd sample_prior(const ScaledCarModel& model, double kappa, std::uint64_t seed,
                                    std::size_t count = 1) {
  PriorSampler sampler(model);
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd out(Eigen::Index(count), Eigen::Index(model.size()));
  for (std::size_t t = 0; t < count; ++t) out.row(Eigen::Index(t)) = sampler.draw(kappa, rng).transpose();
  return out;
}

// Gibbs draw of kappa | x: Gamma(shape + kappa_exponent, rate + x'Rx/2).
template <class Rng>
double draw_kappa_conditional(const Eigen::VectorXd& x, const ScaledCarModel& model, const GammaPriorSpec& prior,
                              Rng& rng) {
  const double shape = prior.shape + model.norm_info.kappa_exponent.value();
  const double rate = prior.rate + 0.5 * model.scaled_R.quadratic_form(x);
  std::gamma_distribution<double> g(shape, 1.0 / rate);
  return g(rng);
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double inv_logit(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Adaptive Metropolis block: proposal scale^2 * (empirical covariance),
// scale tuned by Robbins-Monro, both frozen after burn-in.
class AdaptiveBlock {
 public:
  AdaptiveBlock() = default;
  AdaptiveBlock(Eigen::Index dim, double initial_sd, double target)
      : dim_(dim), target_(target), log_scale_(std::log(2.38 / std::sqrt(double(dim)))),
        chol_(Eigen::MatrixXd::Identity(dim, dim) * initial_sd), mean_(Eigen::VectorXd::Zero(dim)),
        m2_(Eigen::MatrixXd::Zero(dim, dim)) {}

  template <class Rng>
  Eigen::VectorXd propose(const Eigen::VectorXd& current, Rng& rng) const {
    std::normal_distribution<double> z;
    Eigen::VectorXd e(dim_);
    for (Eigen::Index i = 0; i < dim_; ++i) e[i] = z(rng);
    return current + std::exp(log_scale_) * (chol_ * e);
  }

  void adapt(bool accepted, std::size_t t, double decay, const Eigen::VectorXd& state) {
    log_scale_ += std::pow(double(t + 1), -decay) * ((accepted ? 1.0 : 0.0) - target_);
    ++count_;
    const Eigen::VectorXd delta = state - mean_;
    mean_ += delta / double(count_);
    m2_ += delta * (state - mean_).transpose();
    if (count_ >= 200 && count_ % 50 == 0) {
      Eigen::MatrixXd cov = m2_ / double(count_ - 1);
      cov.diagonal().array() += 1e-10 + 1e-6 * cov.diagonal().array();
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() == Eigen::Success) chol_ = llt.matrixL();
    }
  }

 private:
  Eigen::Index dim_ = 0;
  double target_ = 0.234;
  double log_scale_ = 0.0;
  Eigen::MatrixXd chol_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
  std::size_t count_ = 0;
};

struct RateCounter {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  void add(bool ok) {
    ++proposed;
    accepted += ok ? 1 : 0;
  }
  double rate() const { return proposed ? double(accepted) / double(proposed) : 0.0; }
};

struct ChainOutput {
  std::vector<std::string> names;
  Eigen::MatrixXd draws;
  std::vector<double> deviance;
  double deviance_at_mean = 0.0;
  std::map<std::string, double> acceptance;
  std::vector<std::string> warnings;
};

class Chain {
 public:
  Chain(const DiseaseMappingData& data, const ScaledCarModel& model, const FitConfig& cfg,
        const PcPhiPrior* phi_prior, std::uint64_t seed)
      : data_(data), model_(model), cfg_(cfg), phi_prior_(phi_prior), rng_(seed) {
    n_ = Eigen::Index(model.size());
    r_full_ = model.scaled_R.full();
    bym2_ = cfg.model == ModelKind::bym2;
    poisson_ = cfg.likelihood == Likelihood::poisson;
    const auto& p = model.partition;
    comp_nodes_.resize(p.count());
    for (std::size_t k = 0; k < p.count(); ++k) comp_nodes_[k] = p.members(k);
    comp_y_.assign(p.count(), 0.0);
    for (Eigen::Index i = 0; i < n_; ++i) comp_y_[p.labels[std::size_t(i)]] += data.y[std::size_t(i)];
    build_design();
    initialise();
  }

  ChainOutput run() {
    std::size_t iterations = cfg_.iterations, burn_in = cfg_.burn_in;
    if (improper_) {
      iterations = std::min(iterations, cfg_.improper_iteration_cap);
      burn_in = std::min(burn_in, iterations / 2);
    }
    const std::size_t retained = (iterations - burn_in) / cfg_.thin;
    ChainOutput out;
    out.warnings = warnings_;
    out.names = parameter_names();
    out.draws.resize(Eigen::Index(retained), Eigen::Index(out.names.size()));
    out.deviance.reserve(retained);
    Eigen::VectorXd eta_sum = Eigen::VectorXd::Zero(n_);

    std::vector<RateCounter> counters(4);
    std::size_t row = 0;
    for (std::size_t t = 0; t < iterations; ++t) {
      const bool adapting = t < burn_in;
      RateCounter sink;
      auto& c_latent = adapting ? sink : counters[0];
      auto& c_iid = adapting ? sink : counters[1];
      auto& c_fixed = adapting ? sink : counters[2];
      auto& c_hyper = adapting ? sink : counters[3];

      for (Eigen::Index i = 0; i < n_; ++i) {
        if (bym2_) {
          c_iid.add(update_iid_site(i, adapting, t));
          c_latent.add(update_structured_site(i, adapting, t));
        } else {
          c_latent.add(update_structured_site(i, adapting, t));
        }
      }
      if (beta_.size() > 0) c_fixed.add(update_fixed_effects(adapting, t));
      if (bym2_) {
        c_hyper.add(update_bym2_hyper(adapting, t));
      } else if (!cfg_.fixed_kappa) {
        kappa_ = draw_kappa_conditional(structured_, model_, cfg_.kappa_prior, rng_);
      }
      if (!adapting && (t - burn_in + 1) % cfg_.thin == 0 && row < retained) {
        record(out.draws, Eigen::Index(row));
        out.deviance.push_back(deviance(eta_));
        eta_sum += eta_;
        ++row;
      }
    }
    out.deviance_at_mean = deviance(eta_sum / double(retained));
    if (bym2_) {
      out.acceptance["u"] = counters[0].rate();
      out.acceptance["v"] = counters[1].rate();
      out.acceptance["hyper"] = counters[3].rate();
    } else {
      out.acceptance["x"] = counters[0].rate();
    }
    if (beta_.size() > 0) out.acceptance["fixed_effects"] = counters[2].rate();
    return out;
  }

 private:
  // ---- setup ----

  void build_design() {
    const auto& p = model_.partition;
    std::vector<Eigen::VectorXd> cols;
    if (cfg_.intercept) {
      if (cfg_.per_component_intercepts) {
        bool any_single = false;
        for (std::size_t k = 0; k < p.count(); ++k) {
          if (p.sizes[k] == 1) {
            any_single = true;
            continue;
          }
          Eigen::VectorXd c = Eigen::VectorXd::Zero(n_);
          for (std::size_t i : comp_nodes_[k]) c[Eigen::Index(i)] = 1.0;
          cols.push_back(c);
          fixed_names_.push_back("alpha[" + std::to_string(k + 1) + "]");
        }
        if (any_single) {
          Eigen::VectorXd c = Eigen::VectorXd::Zero(n_);
          for (std::size_t i : p.singletons) c[Eigen::Index(i)] = 1.0;
          cols.push_back(c);
          fixed_names_.push_back("alpha[singletons]");
        }
      } else {
        cols.push_back(Eigen::VectorXd::Ones(n_));
        fixed_names_.push_back("alpha");
      }
    }
    for (Eigen::Index c = 0; c < data_.covariates.cols(); ++c) {
      cols.push_back(data_.covariates.col(c));
      fixed_names_.push_back("beta[" + data_.covariate_names[std::size_t(c)] + "]");
    }
    design_.resize(n_, Eigen::Index(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) design_.col(Eigen::Index(c)) = cols[c];
    beta_ = Eigen::VectorXd::Zero(design_.cols());
  }

  void initialise() {
    const auto& a = cfg_.adaptation;
    structured_ = Eigen::VectorXd::Zero(n_);
    iid_ = Eigen::VectorXd::Zero(n_);
    structured_log_scale_.assign(std::size_t(n_), std::log(a.initial_scale));
    iid_log_scale_.assign(std::size_t(n_), std::log(a.initial_scale));

    if (cfg_.intercept && beta_.size() > 0) {
      double level = 0.0;
      if (poisson_) {
        double ys = 0.0, es = 0.0;
        for (Eigen::Index i = 0; i < n_; ++i) {
          ys += data_.y[std::size_t(i)];
          es += data_.expected[std::size_t(i)];
        }
        level = std::log(std::max(ys, 0.5) / es);
      } else {
        level = sample_mean(data_.y);
      }
      const std::size_t n_int = fixed_names_.size() - std::size_t(data_.covariates.cols());
      for (std::size_t c = 0; c < n_int; ++c) beta_[Eigen::Index(c)] = level;
    }
    if (beta_.size() > 0) {
      const double target = beta_.size() == 1 ? a.scalar_target : a.block_target;
      fixed_block_ = AdaptiveBlock(beta_.size(), 0.05, target);
    }

    kappa_ = cfg_.fixed_kappa.value_or(1.0);
    if (bym2_) {
      log_tau_ = 0.0;
      logit_phi_ = 0.0;
      const Eigen::Index dim = cfg_.fixed_phi ? 1 : 2;
      hyper_block_ = AdaptiveBlock(dim, 0.2, dim == 1 ? a.scalar_target : a.block_target);
      set_mixing();
    }

    if (cfg_.model == ModelKind::besag_unscaled && poisson_) {
      for (std::size_t i : model_.partition.singletons) {
        if (data_.y[i] == 0.0) {
          improper_ = true;
          warnings_.push_back("node " + std::to_string(i + 1) +
                              " is an unscaled singleton with a zero count: its flat prior gives an improper "
                              "posterior (pi(theta | y = 0) ~ exp(-theta)/theta); iterations capped at " +
                              std::to_string(cfg_.improper_iteration_cap));
        }
      }
    }
    recompute_eta();
  }

  // ---- bookkeeping ----

  double phi() const { return cfg_.fixed_phi ? *cfg_.fixed_phi : inv_logit(logit_phi_); }

  void set_mixing() {
    const double tau = std::exp(log_tau_);
    const double p = phi();
    const double q = cfg_.fixed_phi ? 1.0 - *cfg_.fixed_phi : inv_logit(-logit_phi_);
    iid_weight_ = std::sqrt(q) / std::sqrt(tau);
    structured_weight_ = std::sqrt(p) / std::sqrt(tau);
  }

  Eigen::VectorXd latent() const {
    if (!bym2_) return structured_;
    return iid_weight_ * iid_ + structured_weight_ * structured_;
  }

  void recompute_eta() {
    eta_ = design_ * beta_ + latent();
    refresh_all();
  }

  void refresh_all() {
    mu_.resize(n_);
    comp_sum_.assign(comp_nodes_.size(), 0.0);
    for (Eigen::Index i = 0; i < n_; ++i) {
      const std::size_t k = model_.partition.labels[std::size_t(i)];
      const double v = poisson_ ? data_.expected[std::size_t(i)] * std::exp(eta_[i]) : data_.y[std::size_t(i)] - eta_[i];
      mu_[i] = v;
      comp_sum_[k] += v;
    }
  }

  void refresh_component(std::size_t k) {
    double s = 0.0;
    for (std::size_t j : comp_nodes_[k]) {
      const auto i = Eigen::Index(j);
      mu_[i] = poisson_ ? data_.expected[j] * std::exp(eta_[i]) : data_.y[j] - eta_[i];
      s += mu_[i];
    }
    comp_sum_[k] = s;
  }

  double point_loglik(std::size_t i, double eta) const {
    if (poisson_) return data_.y[i] * eta - data_.expected[i] * std::exp(eta);
    const double r = data_.y[i] - eta;
    return -0.5 * r * r / (cfg_.gaussian_sd * cfg_.gaussian_sd);
  }

  double total_loglik(const Eigen::VectorXd& eta) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n_; ++i) s += point_loglik(std::size_t(i), eta[i]);
    return s;
  }

  double deviance(const Eigen::VectorXd& eta) const {
    if (poisson_) {
      Eigen::VectorXd mu(n_);
      for (Eigen::Index i = 0; i < n_; ++i) mu[i] = data_.expected[std::size_t(i)] * std::exp(eta[i]);
      return poisson_deviance(data_.y, mu);
    }
    const double s2 = cfg_.gaussian_sd * cfg_.gaussian_sd;
    double d = 0.0;
    for (Eigen::Index i = 0; i < n_; ++i) {
      const double r = data_.y[std::size_t(i)] - eta[i];
      d += r * r / s2 + std::log(2.0 * std::numbers::pi * s2);
    }
    return d;
  }

  double r_times(const Eigen::VectorXd& z, Eigen::Index i) const {
    double s = 0.0;
    for (Eigen::SparseMatrix<double>::InnerIterator it(r_full_, i); it; ++it) s += it.value() * z[it.row()];
    return s;
  }

  bool accept(double log_ratio) {
    if (log_ratio >= 0.0) return true;
    return std::log(unif_(rng_)) < log_ratio;
  }

  void adapt_scalar(double& log_scale, bool ok, std::size_t t) {
    const auto& a = cfg_.adaptation;
    log_scale += std::pow(double(t + 1), -a.decay) * ((ok ? 1.0 : 0.0) - a.scalar_target);
  }

  // ---- updates ----

  // Projected random walk on the structured field (x for Besag, u for BYM2).
  bool update_structured_site(Eigen::Index i, bool adapting, std::size_t t) {
    const std::size_t ui = std::size_t(i);
    const std::size_t k = model_.partition.labels[ui];
    const auto& nodes = comp_nodes_[k];
    const double m = double(nodes.size());
    double& log_scale = structured_log_scale_[ui];
    const double delta = std::exp(log_scale) * norm_(rng_);
    const double prec = bym2_ ? 1.0 : kappa_;
    const double rii = r_full_.coeff(i, i);
    const double w = bym2_ ? structured_weight_ : 1.0;

    double log_ratio = -0.5 * prec * (2.0 * delta * r_times(structured_, i) + delta * delta * rii);
    const double d_own = nodes.size() > 1 ? w * delta * (1.0 - 1.0 / m) : w * delta;
    const double d_rest = nodes.size() > 1 ? -w * delta / m : 0.0;
    if (poisson_) {
      const double mu_i = mu_[i];
      log_ratio += data_.y[ui] * (d_own - d_rest) + d_rest * comp_y_[k] -
                   ((comp_sum_[k] - mu_i) * std::expm1(d_rest) + mu_i * std::expm1(d_own));
    } else {
      const double s2 = cfg_.gaussian_sd * cfg_.gaussian_sd;
      const double r_i = mu_[i];
      const double cross = r_i * (d_own - d_rest) + d_rest * comp_sum_[k];
      const double sq = d_own * d_own + (m - 1.0) * d_rest * d_rest;
      log_ratio += (cross - 0.5 * sq) / s2;
    }

    const bool ok = accept(log_ratio);
    if (ok) {
      if (nodes.size() > 1) {
        const double shift = -delta / m;
        for (std::size_t j : nodes) {
          structured_[Eigen::Index(j)] += shift;
          eta_[Eigen::Index(j)] += d_rest;
        }
        structured_[i] += delta;
        eta_[i] += w * delta;
      } else {
        structured_[i] += delta;
        eta_[i] += d_own;
      }
      refresh_component(k);
    }
    if (adapting) adapt_scalar(log_scale, ok, t);
    return ok;
  }

  bool update_iid_site(Eigen::Index i, bool adapting, std::size_t t) {
    const std::size_t ui = std::size_t(i);
    double& log_scale = iid_log_scale_[ui];
    const double delta = std::exp(log_scale) * norm_(rng_);
    const double d_eta = iid_weight_ * delta;
    double log_ratio = -0.5 * (2.0 * delta * iid_[i] + delta * delta);
    log_ratio += point_loglik(ui, eta_[i] + d_eta) - point_loglik(ui, eta_[i]);
    const bool ok = accept(log_ratio);
    if (ok) {
      iid_[i] += delta;
      eta_[i] += d_eta;
      refresh_component(model_.partition.labels[ui]);
    }
    if (adapting) adapt_scalar(log_scale, ok, t);
    return ok;
  }

  bool update_fixed_effects(bool adapting, std::size_t t) {
    const Eigen::VectorXd prop = fixed_block_.propose(beta_, rng_);
    const Eigen::VectorXd eta_new = eta_ + design_ * (prop - beta_);
    const double prec = cfg_.fixed_effect_precision;
    const double log_ratio = total_loglik(eta_new) - total_loglik(eta_) - 0.5 * prec * (prop.squaredNorm() - beta_.squaredNorm());
    const bool ok = accept(log_ratio);
    if (ok) {
      beta_ = prop;
      eta_ = eta_new;
      refresh_all();
    }
    if (adapting) fixed_block_.adapt(ok, t, cfg_.adaptation.decay, beta_);
    return ok;
  }

  double hyper_log_target(double log_tau, double logit_phi) const {
    const double tau = std::exp(log_tau);
    double lp = pc_prior_precision_logpdf(tau, *cfg_.prec_prior) + log_tau;
    double p = cfg_.fixed_phi ? *cfg_.fixed_phi : inv_logit(logit_phi);
    double q = cfg_.fixed_phi ? 1.0 - *cfg_.fixed_phi : inv_logit(-logit_phi);
    if (!cfg_.fixed_phi) {
      if (!std::isfinite(logit_phi)) return -std::numeric_limits<double>::infinity();
      lp += phi_prior_->logpdf_logit(logit_phi);
    }
    const Eigen::VectorXd eta =
        design_ * beta_ + (std::sqrt(q) / std::sqrt(tau)) * iid_ + (std::sqrt(p) / std::sqrt(tau)) * structured_;
    return lp + total_loglik(eta);
  }

  bool update_bym2_hyper(bool adapting, std::size_t t) {
    Eigen::VectorXd cur(cfg_.fixed_phi ? 1 : 2);
    cur[0] = log_tau_;
    if (!cfg_.fixed_phi) cur[1] = logit_phi_;
    const Eigen::VectorXd prop = hyper_block_.propose(cur, rng_);
    const double lp_prop = hyper_log_target(prop[0], cfg_.fixed_phi ? 0.0 : prop[1]);
    const double lp_cur = hyper_log_target(log_tau_, logit_phi_);
    const bool ok = std::isfinite(lp_prop) && accept(lp_prop - lp_cur);
    if (ok) {
      log_tau_ = prop[0];
      if (!cfg_.fixed_phi) logit_phi_ = prop[1];
      set_mixing();
      recompute_eta();
    }
    Eigen::VectorXd now(cur.size());
    now[0] = log_tau_;
    if (!cfg_.fixed_phi) now[1] = logit_phi_;
    if (adapting) hyper_block_.adapt(ok, t, cfg_.adaptation.decay, now);
    return ok;
  }

  // ---- output ----

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    if (bym2_) {
      names.push_back("tau");
      names.push_back("phi");
    } else {
      names.push_back("kappa");
    }
    for (const auto& f : fixed_names_) names.push_back(f);
    for (Eigen::Index i = 0; i < n_; ++i) names.push_back("x[" + std::to_string(i + 1) + "]");
    if (poisson_)
      for (Eigen::Index i = 0; i < n_; ++i) names.push_back("r[" + std::to_string(i + 1) + "]");
    return names;
  }

  void record(Eigen::MatrixXd& draws, Eigen::Index r) const {
    auto row = draws.row(r);
    Eigen::Index c = 0;
    if (bym2_) {
      row[c++] = std::exp(log_tau_);
      row[c++] = phi();
    } else {
      row[c++] = kappa_;
    }
    for (Eigen::Index j = 0; j < beta_.size(); ++j) row[c++] = beta_[j];
    const Eigen::VectorXd x = latent();
    for (Eigen::Index i = 0; i < n_; ++i) row[c++] = x[i];
    if (poisson_)
      for (Eigen::Index i = 0; i < n_; ++i) row[c++] = std::exp(eta_[i]);
  }

  const DiseaseMappingData& data_;
  const ScaledCarModel& model_;
  const FitConfig& cfg_;
  const PcPhiPrior* phi_prior_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> norm_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};

  Eigen::Index n_ = 0;
  bool bym2_ = false;
  bool poisson_ = true;
  bool improper_ = false;
  std::vector<std::string> warnings_;
  Eigen::SparseMatrix<double> r_full_;
  std::vector<std::vector<std::size_t>> comp_nodes_;
  std::vector<double> comp_y_;

  Eigen::MatrixXd design_;
  std::vector<std::string> fixed_names_;
  Eigen::VectorXd beta_;
  AdaptiveBlock fixed_block_;

  Eigen::VectorXd structured_;  // x (Besag) or u (BYM2)
  Eigen::VectorXd iid_;         // v (BYM2)
  std::vector<double> structured_log_scale_;
  std::vector<double> iid_log_scale_;
  double kappa_ = 1.0;
  double log_tau_ = 0.0;
  double logit_phi_ = 0.0;
  double iid_weight_ = 0.0;
  double structured_weight_ = 1.0;
  AdaptiveBlock hyper_block_;

  Eigen::VectorXd eta_;
  Eigen::VectorXd mu_;  // E_i exp(eta_i) for Poisson, residual y_i - eta_i for Gaussian
  std::vector<double> comp_sum_;
};

inline FitResult assemble(const FitConfig& cfg, std::vector<ChainOutput>& chains) {
  ChainOutput& main = chains.front();
  FitResult res;
  res.seed = cfg.seed;
  res.retained = std::size_t(main.draws.rows());
  res.acceptance_rates = main.acceptance;
  res.warnings = main.warnings;
  for (Eigen::Index c = 0; c < main.draws.cols(); ++c) {
    std::vector<double> col(main.draws.col(c).data(), main.draws.col(c).data() + main.draws.rows());
    res.summaries.push_back(summarize(main.names[std::size_t(c)], col));
  }
  const auto d = dic(main.deviance, main.deviance_at_mean);
  res.dic = d.dic;
  res.p_d = d.p_d;
  res.mean_deviance = sample_mean(main.deviance);
  res.deviance_at_mean = main.deviance_at_mean;
  res.deviance_draws = main.deviance;
  if (cfg.keep_samples) {
    res.sample_names = main.names;
    res.samples = main.draws;
  }
  if (chains.size() > 1) {
    for (const auto& ch : chains) {
      std::map<std::string, double> means;
      for (Eigen::Index c = 0; c < ch.draws.cols(); ++c) means[ch.names[std::size_t(c)]] = ch.draws.col(c).mean();
      res.chain_means.push_back(std::move(means));
    }
    for (Eigen::Index c = 0; c < main.draws.cols(); ++c) {
      const auto& name = main.names[std::size_t(c)];
      if (name.starts_with("x[") || name.starts_with("r[")) continue;
      std::vector<std::vector<double>> cols;
      for (const auto& ch : chains)
        cols.emplace_back(ch.draws.col(c).data(), ch.draws.col(c).data() + ch.draws.rows());
      res.rhat[name] = gelman_rubin(cols);
    }
  }
  return res;
}

inline void check_acceptance(const FitResult& res) {
  if (!res.warnings.empty()) return;  // improper runs are reported, not rejected
  for (const auto& [block, rate] : res.acceptance_rates)
    if (rate < 0.05 || rate > 0.95)
      throw NumericalError("adaptation did not converge: acceptance rate of block '" + block + "' is " +
                           std::to_string(rate));
}

inline FitResult run_chains(const DiseaseMappingData& data, const ScaledCarModel& model, const FitConfig& cfg,
                            const PcPhiPrior* phi_prior) {
  std::vector<ChainOutput> outputs(cfg.chains);
  auto run_one = [&](unsigned k) {
    Chain chain(data, model, cfg, phi_prior, splitmix64(cfg.seed + 0x632be59bd9b4e019ULL * k));
    outputs[k] = chain.run();
  };
  if (cfg.chains == 1) {
    run_one(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(cfg.chains);
    for (unsigned k = 0; k < cfg.chains; ++k)
      pool.emplace_back([&, k] {
        try {
          run_one(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  FitResult res = assemble(cfg, outputs);
  check_acceptance(res);
  return res;
}

inline void check_inputs(const DiseaseMappingData& data, const Graph& g, const FitConfig& cfg) {
  cfg.validate();
  require(data.size() == g.size(), "data has " + std::to_string(data.size()) + " rows but the graph has " +
                                       std::to_string(g.size()) + " nodes");
  data.validate(cfg.likelihood == Likelihood::poisson);
}

}  // namespace detail

inline FitResult fit_besag(const DiseaseMappingData& data, const ScaledCarModel& model, const FitConfig& cfg) {
  detail::check_inputs(data, model.graph, cfg);
  require(cfg.model != ModelKind::bym2, "fit_besag: model kind is bym2");
  require(model.scaled == (cfg.model == ModelKind::besag_scaled), "fit_besag: model scaling does not match config");
  return detail::run_chains(data, model, cfg, nullptr);
}

inline FitResult fit_besag(const DiseaseMappingData& data, const Graph& g, const FitConfig& cfg) {
  detail::check_inputs(data, g, cfg);
  const auto model = cfg.model == ModelKind::besag_unscaled ? unscaled_model(g, cfg.scale) : scale_model(g, cfg.scale);
  return fit_besag(data, model, cfg);
}

inline FitResult fit_bym2(const DiseaseMappingData& data, const Graph& g, const FitConfig& cfg) {
  detail::check_inputs(data, g, cfg);
  require(cfg.model == ModelKind::bym2, "fit_bym2: model kind must be bym2");
  const auto model = scale_model(g, cfg.scale);
  std::optional<PcPhiPrior> phi_prior;
  if (!cfg.fixed_phi) phi_prior.emplace(*cfg.phi_prior, make_bym2_spec(model));
  return detail::run_chains(data, model, cfg, phi_prior ? &*phi_prior : nullptr);
}

inline FitResult fit(const DiseaseMappingData& data, const Graph& g, const FitConfig& cfg) {
  return cfg.model == ModelKind::bym2 ? fit_bym2(data, g, cfg) : fit_besag(data, g, cfg);
}

}  // namespace icar
