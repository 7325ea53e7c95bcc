#pragma once

// Subcommands behind the `icar` executable. Each one reads its inputs,
// writes files under the output directory and prints a short report.

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "icar/config.hpp"
#include "icar/data.hpp"
#include "icar/error.hpp"
#include "icar/graph.hpp"
#include "icar/mcmc.hpp"
#include "icar/priors.hpp"
#include "icar/scaler.hpp"
#include "icar/sparse_symmetric.hpp"

namespace icar::cli {

struct Options {
  std::string command;
  std::string graph_path;
  std::string data_path;
  std::string config_path;
  std::string output_dir;
  std::optional<std::vector<std::size_t>> isolate;  // 1-based
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model;
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> burn_in;
  std::optional<std::size_t> thin;
  std::optional<unsigned> chains;
  std::optional<double> kappa;
  std::optional<std::size_t> draws;
};

inline std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string join(const std::vector<std::size_t>& v, std::size_t offset = 0) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k] + offset);
  return s;
}

// Defaults, then the config file, then flags.
inline RunSettings resolve(const Options& o) {
  RunSettings s = o.config_path.empty() ? parse_settings(json::object()) : load_settings(o.config_path);
  if (o.isolate) s.isolate = *o.isolate;
  if (o.seed) s.fit.seed = *o.seed;
  if (o.model) s.fit.model = parse_model_kind(*o.model);
  if (o.iterations) s.fit.iterations = *o.iterations;
  if (o.burn_in) s.fit.burn_in = *o.burn_in;
  if (o.thin) s.fit.thin = *o.thin;
  if (o.chains) s.fit.chains = *o.chains;
  if (o.kappa) s.kappa = *o.kappa;
  if (o.draws) s.draws = *o.draws;
  require(s.kappa > 0.0, "kappa must be positive");
  return s;
}

inline Graph load_graph(const std::string& path, const std::vector<std::size_t>& isolate) {
  require(!path.empty(), "--graph is required");
  std::ifstream in(path);
  if (!in) throw InputError("cannot open graph file '" + path + "'");
  Graph g = parse_graph(in);
  if (isolate.empty()) return g;
  std::vector<std::size_t> zero_based;
  for (std::size_t i : isolate) {
    require(i >= 1 && i <= g.size(), "isolate: node " + std::to_string(i) + " outside 1.." + std::to_string(g.size()));
    zero_based.push_back(i - 1);
  }
  return isolate_nodes(g, zero_based);
}

inline std::filesystem::path output_dir(const Options& o) {
  std::filesystem::path dir = o.output_dir.empty() ? "." : o.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw InputError("cannot create output directory '" + dir.string() + "'");
  return dir;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw InputError("cannot write '" + p.string() + "'");
  return f;
}

// ---- components ----------------------------------------------------------

inline std::string components_report(const ComponentPartition& p) {
  std::vector<std::size_t> sizes(p.sizes.begin(), p.sizes.end());
  std::string s = std::to_string(p.count()) + (p.count() == 1 ? " component" : " components");
  s += ": sizes " + join(sizes) + "; singletons: ";
  s += p.singletons.empty() ? std::string("none") : join(p.singletons, 1);
  return s;
}

inline int cmd_components(const Options& o, std::ostream& out) {
  const auto s = resolve(o);
  const Graph g = load_graph(o.graph_path, s.isolate);
  const auto p = connected_components(g);
  out << components_report(p) << '\n';
  if (!o.output_dir.empty()) {
    auto f = open_out(output_dir(o) / "components.csv");
    f << "node,component,component_size\n";
    for (std::size_t i = 0; i < g.size(); ++i)
      f << i + 1 << ',' << p.labels[i] + 1 << ',' << p.sizes[p.labels[i]] << '\n';
  }
  return 0;
}

// ---- scale ---------------------------------------------------------------

inline json norm_info_json(const ScaledCarModel& m) {
  std::vector<std::size_t> singletons;
  for (std::size_t i : m.partition.singletons) singletons.push_back(i + 1);
  return {{"n", m.size()},
          {"scaled", m.scaled},
          {"components", m.partition.count()},
          {"sizes", m.partition.sizes},
          {"singletons", singletons},
          {"scaling_constants", m.component_constants},
          {"kappa_exponent", m.norm_info.kappa_exponent.str()},
          {"kappa_exponent_twice", m.norm_info.kappa_exponent.twice},
          {"generalized_log_determinant", m.norm_info.gen_log_det}};
}

inline int cmd_scale(const Options& o, std::ostream& out) {
  const auto s = resolve(o);
  const Graph g = load_graph(o.graph_path, s.isolate);
  const auto m = scale_model(g, s.fit.scale);
  const auto dir = output_dir(o);
  {
    auto f = open_out(dir / "scaled_R.mtx");
    write_matrix_market(m.scaled_R, f);
  }
  {
    auto f = open_out(dir / "scaling.csv");
    f << "node,component,degree,marginal_variance,scaling_constant\n";
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto k = m.partition.labels[i];
      f << i + 1 << ',' << k + 1 << ',' << g.degree(i) << ',' << fmt(m.marginal_variances[i]) << ','
        << fmt(m.component_constants[k]) << '\n';
    }
  }
  {
    auto f = open_out(dir / "norm_info.json");
    f << norm_info_json(m).dump(2) << '\n';
  }
  out << components_report(m.partition) << '\n';
  for (std::size_t k = 0; k < m.partition.count(); ++k)
    out << "component " << k + 1 << ": c = " << fmt(m.component_constants[k]) << '\n';
  out << "kappa exponent " << m.norm_info.kappa_exponent.str() << ", log generalized determinant "
      << fmt(m.norm_info.gen_log_det) << '\n';
  return 0;
}

// ---- fit -----------------------------------------------------------------

inline bool reported(const std::string& name, const std::vector<std::size_t>& nodes) {
  if (!(name.starts_with("x[") || name.starts_with("r["))) return true;
  if (nodes.empty()) return true;
  const auto node = std::stoul(name.substr(2, name.size() - 3));
  return std::find(nodes.begin(), nodes.end(), node) != nodes.end();
}

inline int cmd_fit(const Options& o, std::ostream& out) {
  const auto s = resolve(o);
  s.fit.validate();  // before any file is touched
  require(!o.data_path.empty(), "--data is required for fit");
  const Graph g = load_graph(o.graph_path, s.isolate);
  for (std::size_t i : s.report_nodes)
    require(i <= g.size(), "report_nodes: node " + std::to_string(i) + " outside the graph");
  std::ifstream din(o.data_path);
  if (!din) throw InputError("cannot open data file '" + o.data_path + "'");
  const auto data = read_disease_csv(din, s.covariates);
  require(data.size() == g.size(), "data has " + std::to_string(data.size()) + " rows but the graph has " +
                                       std::to_string(g.size()) + " nodes");
  const auto dir = output_dir(o);

  const auto t0 = std::chrono::steady_clock::now();
  const FitResult res = fit(data, g, s.fit);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  {
    auto f = open_out(dir / "summaries.csv");
    f << "name,mean,sd,q2.5,median,q97.5\n";
    for (const auto& p : res.summaries)
      if (reported(p.name, s.report_nodes))
        f << p.name << ',' << fmt(p.mean) << ',' << fmt(p.sd) << ',' << fmt(p.q025) << ',' << fmt(p.median) << ','
          << fmt(p.q975) << '\n';
  }
  {
    json d = {{"acceptance_rates", res.acceptance_rates},
              {"dic", res.dic},
              {"p_d", res.p_d},
              {"mean_deviance", res.mean_deviance},
              {"deviance_at_mean", res.deviance_at_mean},
              {"retained_draws", res.retained},
              {"seed", res.seed},
              {"warnings", res.warnings},
              {"config", to_json(s)}};
    if (!res.rhat.empty()) d["rhat"] = res.rhat;
    auto f = open_out(dir / "diagnostics.json");
    f << d.dump(2) << '\n';
  }
  if (s.fit.keep_samples) {
    auto f = open_out(dir / "samples.csv");
    for (std::size_t c = 0; c < res.sample_names.size(); ++c) f << (c ? "," : "") << res.sample_names[c];
    f << ",deviance\n";
    for (Eigen::Index r = 0; r < res.samples.rows(); ++r) {
      for (Eigen::Index c = 0; c < res.samples.cols(); ++c) f << (c ? "," : "") << fmt(res.samples(r, c));
      f << ',' << fmt(res.deviance_draws[std::size_t(r)]) << '\n';
    }
  }

  for (const auto& w : res.warnings) out << "warning: " << w << '\n';
  out << to_string(s.fit.model) << ": " << res.retained << " draws in " << fmt(seconds) << " s, DIC " << fmt(res.dic)
      << ", p_D " << fmt(res.p_d) << '\n';
  for (const auto& p : res.summaries)
    if (!(p.name.starts_with("x[") || p.name.starts_with("r[")) || (!s.report_nodes.empty() && reported(p.name, s.report_nodes)))
      out << "  " << p.name << ": mean " << fmt(p.mean) << ", sd " << fmt(p.sd) << '\n';
  return 0;
}

// ---- simulate ------------------------------------------------------------

inline int cmd_simulate(const Options& o, std::ostream& out) {
  const auto s = resolve(o);
  require(s.draws >= 2, "simulate: need at least two draws");
  const Graph g = load_graph(o.graph_path, s.isolate);
  const auto m = s.fit.model == ModelKind::besag_unscaled ? unscaled_model(g, s.fit.scale) : scale_model(g, s.fit.scale);
  const auto x = sample_prior(m, s.kappa, s.fit.seed, s.draws);
  const auto dir = output_dir(o);
  const auto n = x.cols();

  if (s.write_draws) {
    auto f = open_out(dir / "draws.csv");
    for (Eigen::Index i = 0; i < n; ++i) f << (i ? "," : "") << "x[" << i + 1 << ']';
    f << '\n';
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index i = 0; i < n; ++i) f << (i ? "," : "") << fmt(x(r, i));
      f << '\n';
    }
  }

  double worst_mean = 0.0;
  for (const auto& nodes : m.constraints)
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      double sum = 0.0;
      for (std::size_t i : nodes) sum += x(r, Eigen::Index(i));
      worst_mean = std::max(worst_mean, std::abs(sum / double(nodes.size())));
    }

  auto f = open_out(dir / "variances.csv");
  f << "node,component,empirical_variance,model_variance\n";
  double log_sum = 0.0;
  std::size_t structured = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = m.partition.labels[std::size_t(i)];
    const Eigen::VectorXd col = x.col(i);
    const double v = (col.array() - col.mean()).square().sum() / double(x.rows() - 1);
    // scaled block = c_k R_k, so its variances are the raw ones over c_k
    const double model_v = m.partition.sizes[k] == 1 ? 1.0 / s.kappa
                                                     : m.marginal_variances[std::size_t(i)] /
                                                           m.component_constants[k] / s.kappa;
    f << i + 1 << ',' << k + 1 << ',' << fmt(v) << ',' << fmt(model_v) << '\n';
    if (m.partition.sizes[k] > 1) {
      log_sum += std::log(v);
      ++structured;
    }
  }
  out << s.draws << " draws at kappa " << fmt(s.kappa) << '\n';
  out << "largest |component mean|: " << fmt(worst_mean) << '\n';
  if (structured)
    out << "geometric mean of empirical variances (components of size > 1): "
        << fmt(std::exp(log_sum / double(structured))) << '\n';
  for (std::size_t i : m.partition.singletons) {
    const Eigen::VectorXd col = x.col(Eigen::Index(i));
    out << "singleton " << i + 1 << " variance: "
        << fmt((col.array() - col.mean()).square().sum() / double(x.rows() - 1)) << '\n';
  }
  return 0;
}

// ---- prior-check ---------------------------------------------------------

inline double pc_prec_tail_numeric(const PcPriorSpec& spec) {
  using boost::math::quadrature::gauss_kronrod;
  const double upper = 1.0 / (spec.u * spec.u);  // sigma > U  <=>  tau < U^-2
  return gauss_kronrod<double, 61>::integrate(
      [&](double t) { return t > 0.0 ? std::exp(pc_prior_precision_logpdf(t, spec)) : 0.0; }, 0.0, upper, 15, 1e-14);
}

// Composite Simpson over s = x^shape, where the density is bounded:
//   g(s) = rate^shape / Gamma(shape + 1) * exp(-rate s^(1/shape)).
struct GammaGrid {
  std::vector<double> x, pdf;
  double integral = 0.0;
};

inline GammaGrid gamma_grid(const GammaPriorSpec& spec, std::size_t points) {
  const boost::math::gamma_distribution<double> dist(spec.shape, 1.0 / spec.rate);
  const double upper = boost::math::quantile(boost::math::complement(dist, 1e-13));
  const double s_max = std::pow(upper, spec.shape);
  const double h = s_max / double(points - 1);
  const double g0 = std::exp(spec.shape * std::log(spec.rate) - std::lgamma(spec.shape + 1.0));
  GammaGrid out;
  double acc = 0.0;
  for (std::size_t k = 0; k < points; ++k) {
    const double s = h * double(k);
    const double x = std::pow(s, 1.0 / spec.shape);
    const double g = g0 * std::exp(-spec.rate * x);
    const double w = (k == 0 || k + 1 == points) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    acc += w * g;
    out.x.push_back(x);
    out.pdf.push_back(x > 0.0 || spec.shape >= 1.0 ? boost::math::pdf(dist, x) : infinite_variance);
  }
  out.integral = acc * h / 3.0;
  return out;
}

inline int cmd_prior_check(const Options& o, std::ostream& out) {
  const auto s = resolve(o);
  require(!s.priors.empty(), "prior-check: the config lists no priors");
  const auto dir = output_dir(o);
  auto grid = open_out(dir / "density_grid.csv");
  grid << "prior,value,pdf\n";
  json report = json::array();
  const std::size_t npts = s.grid_points;

  for (const auto& p : s.priors) {
    if (p.kind == "pc.prec") {
      const double tail = pc_prec_tail_numeric(p.pc);
      for (std::size_t k = 0; k < npts; ++k) {
        const double tau = std::pow(10.0, -4.0 + 8.0 * double(k) / double(npts - 1));
        grid << "pc.prec," << fmt(tau) << ',' << fmt(std::exp(pc_prior_precision_logpdf(tau, p.pc))) << '\n';
      }
      report.push_back({{"prior", p.kind}, {"u", p.pc.u}, {"alpha", p.pc.tail_prob},
                        {"rate", pc_prec_rate(p.pc)}, {"p_sigma_above_u", tail},
                        {"error", tail - p.pc.tail_prob}});
      out << "pc.prec: P(sigma > " << fmt(p.pc.u) << ") = " << fmt(tail) << " (target " << fmt(p.pc.tail_prob)
          << ")\n";
    } else if (p.kind == "pc.phi") {
      require(!o.graph_path.empty(), "prior-check: pc.phi needs --graph");
      const Graph g = load_graph(o.graph_path, s.isolate);
      const PcPhiPrior prior(p.pc, make_bym2_spec(scale_model(g, s.fit.scale)));
      const double below = prior.probability(0.0, p.pc.u);
      const double total = prior.probability(0.0, 1.0);
      for (std::size_t k = 1; k <= npts; ++k) {
        const double phi = double(k) / double(npts + 1);
        grid << "pc.phi," << fmt(phi) << ',' << fmt(prior.pdf(phi)) << '\n';
      }
      report.push_back({{"prior", p.kind}, {"u", p.pc.u}, {"alpha", p.pc.tail_prob}, {"rate", prior.rate()},
                        {"p_phi_below_u", below}, {"error", below - p.pc.tail_prob}, {"total", total}});
      out << "pc.phi: P(phi < " << fmt(p.pc.u) << ") = " << fmt(below) << " (target " << fmt(p.pc.tail_prob)
          << "), total " << fmt(total) << ", rate " << fmt(prior.rate()) << '\n';
    } else {
      const auto gg = gamma_grid(p.gamma, npts);
      for (std::size_t k = 0; k < gg.x.size(); ++k) grid << "gamma," << fmt(gg.x[k]) << ',' << fmt(gg.pdf[k]) << '\n';
      report.push_back({{"prior", p.kind}, {"shape", p.gamma.shape}, {"rate", p.gamma.rate},
                        {"grid_integral", gg.integral}, {"error", gg.integral - 1.0}});
      out << "gamma(" << fmt(p.gamma.shape) << ", " << fmt(p.gamma.rate) << "): grid integral " << fmt(gg.integral)
          << '\n';
    }
  }
  auto f = open_out(dir / "prior_report.json");
  f << report.dump(2) << '\n';
  return 0;
}

// ---- dispatch ------------------------------------------------------------

inline json error_json(const char* kind, int code, const std::string& message) {
  return {{"error", kind}, {"exit_code", code}, {"message", message}};
}

inline int run(const Options& o, std::ostream& out, std::ostream& err) {
  try {
    if (o.command == "components") return cmd_components(o, out);
    if (o.command == "scale") return cmd_scale(o, out);
    if (o.command == "fit") return cmd_fit(o, out);
    if (o.command == "simulate") return cmd_simulate(o, out);
    if (o.command == "prior-check") return cmd_prior_check(o, out);
    throw InputError("unknown command '" + o.command + "'");
  } catch (const InputError& e) {
    err << error_json("input", 2, e.what()).dump() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << error_json("numerical", 3, e.what()).dump() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << error_json("numerical", 3, e.what()).dump() << '\n';
    return 3;
  }
}

}  // namespace icar::cli
