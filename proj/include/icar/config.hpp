#pragma once

// JSON run configuration. Layout:
//
//   {
//     "model": "besag-scaled",
//     "priors": [ {"prior": "gamma", "shape": 1, "rate": 5e-5},
//                 {"prior": "pc.prec", "u": 1, "alpha": 0.01},
//                 {"prior": "pc.phi", "u": 0.5, "alpha": 0.5} ],
//     "covariates": [ {"name": "X", "multiplier": 0.1} ],
//     "iterations": 200000, "burn_in": 50000, "thin": 10, "seed": 1, "chains": 1,
//     "report_nodes": [6, 8, 11], "isolate": [6, 8, 11],
//     "kappa": 1, "draws": 100000
//   }
//
// Every key is optional. Command-line flags are applied on top.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "icar/data.hpp"
#include "icar/error.hpp"
#include "icar/mcmc.hpp"
#include "icar/priors.hpp"

namespace icar {

using json = nlohmann::json;

struct PriorEntry {
  std::string kind;  // "pc.prec", "pc.phi" or "gamma"
  PcPriorSpec pc;
  GammaPriorSpec gamma;
};

struct RunSettings {
  FitConfig fit;
  std::vector<PriorEntry> priors;
  std::vector<CovariateColumn> covariates;
  std::vector<std::size_t> report_nodes;  // 1-based; empty = all
  std::vector<std::size_t> isolate;       // 1-based
  double kappa = 1.0;                     // simulate
  std::size_t draws = 10000;              // simulate
  bool write_draws = true;                // simulate
  std::size_t grid_points = 2001;         // prior-check
  json source = json::object();
};

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(std::string("config: field '") + key + "' has the wrong type");
  }
}

inline std::vector<std::size_t> node_list(const json& j, const char* key) {
  std::vector<std::size_t> out;
  if (!j.contains(key)) return out;
  require(j.at(key).is_array(), std::string("config: '") + key + "' must be an array of node numbers");
  for (const auto& v : j.at(key)) {
    require(v.is_number_integer() && v.get<long long>() >= 1,
            std::string("config: '") + key + "' entries must be positive integers");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

inline PriorEntry parse_prior(const json& p) {
  require(p.is_object() && p.contains("prior"), "config: every prior needs a 'prior' field");
  PriorEntry e;
  e.kind = get_or<std::string>(p, "prior", "");
  if (e.kind == "pc.prec" || e.kind == "pc.phi") {
    e.pc.u = get_or(p, "u", e.kind == "pc.phi" ? 0.5 : 1.0);
    e.pc.tail_prob = get_or(p, "alpha", e.kind == "pc.phi" ? 0.5 : 0.01);
    e.pc.validate();
    if (e.kind == "pc.phi") require(e.pc.u < 1.0, "config: pc.phi needs U in (0, 1)");
  } else if (e.kind == "gamma") {
    e.gamma.shape = get_or(p, "shape", 1.0);
    e.gamma.rate = get_or(p, "rate", 5e-5);
    require(e.gamma.shape > 0.0 && e.gamma.rate > 0.0, "config: gamma prior needs positive shape and rate");
  } else {
    throw InputError("config: unknown prior '" + e.kind + "' (expected pc.prec, pc.phi or gamma)");
  }
  return e;
}

}  // namespace detail

inline RunSettings parse_settings(const json& j) {
  require(j.is_object(), "config: top level must be a JSON object");
  using detail::get_or;
  RunSettings s;
  s.source = j;
  auto& f = s.fit;
  if (j.contains("model")) f.model = parse_model_kind(get_or<std::string>(j, "model", ""));
  const auto lik = get_or<std::string>(j, "likelihood", "poisson");
  if (lik == "poisson")
    f.likelihood = Likelihood::poisson;
  else if (lik == "gaussian")
    f.likelihood = Likelihood::gaussian;
  else
    throw InputError("config: unknown likelihood '" + lik + "'");
  f.gaussian_sd = get_or(j, "gaussian_sd", f.gaussian_sd);

  if (j.contains("priors")) {
    require(j.at("priors").is_array(), "config: 'priors' must be an array");
    for (const auto& p : j.at("priors")) s.priors.push_back(detail::parse_prior(p));
  }
  for (const auto& p : s.priors) {
    if (p.kind == "gamma") f.kappa_prior = p.gamma;
    if (p.kind == "pc.prec") f.prec_prior = p.pc;
    if (p.kind == "pc.phi") f.phi_prior = p.pc;
  }

  if (j.contains("covariates")) {
    require(j.at("covariates").is_array(), "config: 'covariates' must be an array");
    for (const auto& c : j.at("covariates")) {
      if (c.is_string()) {
        s.covariates.push_back({c.get<std::string>(), 1.0});
      } else {
        require(c.is_object() && c.contains("name"), "config: covariate entries need a 'name'");
        s.covariates.push_back({get_or<std::string>(c, "name", ""), get_or(c, "multiplier", 1.0)});
      }
    }
  }

  if (j.contains("fixed_kappa")) f.fixed_kappa = get_or(j, "fixed_kappa", 1.0);
  if (j.contains("fixed_phi")) f.fixed_phi = get_or(j, "fixed_phi", 0.5);
  f.intercept = get_or(j, "intercept", f.intercept);
  f.per_component_intercepts = get_or(j, "per_component_intercepts", f.per_component_intercepts);
  f.fixed_effect_precision = get_or(j, "fixed_effect_precision", f.fixed_effect_precision);
  f.iterations = get_or(j, "iterations", f.iterations);
  f.burn_in = get_or(j, "burn_in", f.burn_in);
  f.thin = get_or(j, "thin", f.thin);
  f.seed = get_or(j, "seed", f.seed);
  f.chains = get_or(j, "chains", f.chains);
  f.keep_samples = get_or(j, "keep_samples", f.keep_samples);
  f.improper_iteration_cap = get_or(j, "improper_iteration_cap", f.improper_iteration_cap);

  s.report_nodes = detail::node_list(j, "report_nodes");
  s.isolate = detail::node_list(j, "isolate");
  s.kappa = get_or(j, "kappa", s.kappa);
  s.draws = get_or(j, "draws", s.draws);
  s.write_draws = get_or(j, "write_draws", s.write_draws);
  s.grid_points = get_or(j, "grid_points", s.grid_points);
  require(s.kappa > 0.0, "config: kappa must be positive");
  require(s.grid_points >= 3 && s.grid_points % 2 == 1, "config: grid_points must be odd and at least 3");
  return s;
}

inline RunSettings load_settings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config: cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("config: " + path + ": " + e.what());
  }
  return parse_settings(j);
}

// Effective settings as JSON, for the diagnostics echo.
inline json to_json(const RunSettings& s) {
  const auto& f = s.fit;
  json priors = json::array();
  for (const auto& p : s.priors) {
    if (p.kind == "gamma")
      priors.push_back({{"prior", p.kind}, {"shape", p.gamma.shape}, {"rate", p.gamma.rate}});
    else
      priors.push_back({{"prior", p.kind}, {"u", p.pc.u}, {"alpha", p.pc.tail_prob}});
  }
  json covs = json::array();
  for (const auto& c : s.covariates) covs.push_back({{"name", c.name}, {"multiplier", c.multiplier}});
  json j = {{"model", to_string(f.model)},
            {"likelihood", f.likelihood == Likelihood::poisson ? "poisson" : "gaussian"},
            {"priors", priors},
            {"kappa_prior", {{"shape", f.kappa_prior.shape}, {"rate", f.kappa_prior.rate}}},
            {"covariates", covs},
            {"intercept", f.intercept},
            {"per_component_intercepts", f.per_component_intercepts},
            {"fixed_effect_precision", f.fixed_effect_precision},
            {"iterations", f.iterations},
            {"burn_in", f.burn_in},
            {"thin", f.thin},
            {"seed", f.seed},
            {"chains", f.chains},
            {"report_nodes", s.report_nodes},
            {"isolate", s.isolate}};
  if (f.likelihood == Likelihood::gaussian) j["gaussian_sd"] = f.gaussian_sd;
  if (f.fixed_kappa) j["fixed_kappa"] = *f.fixed_kappa;
  if (f.fixed_phi) j["fixed_phi"] = *f.fixed_phi;
  return j;
}

}  // namespace icar
