// One PASS/FAIL line per acceptance criterion; nonzero exit if any fail.

#include <boost/math/special_functions/gamma.hpp>

#include <Eigen/Dense>

#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>

#include "icar/mcmc.hpp"
#include "icar/precision.hpp"
#include "icar/priors.hpp"
#include "icar/scaler.hpp"
#include "test_util.hpp"

using namespace icar;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string details;
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!details.empty()) details += "; ";
    details += what + (ok ? "" : " [x]");
  }
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.details = std::string("exception: ") + e.what();
  }
  failures += !o.pass;
  std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.details.c_str());
  std::fflush(stdout);
}

std::vector<double> dense_vars(const Graph& g) { return marginal_variances_dense(structure_matrix(g), connected_components(g)); }

FitConfig scotland_config(ModelKind kind) {
  FitConfig c;
  c.model = kind;
  c.kappa_prior = {1.0, 5e-5};
  c.iterations = 200000;
  c.burn_in = 50000;
  c.thin = 10;
  c.seed = 20240601;
  return c;
}

bool within_rel(double v, double target, double rel) { return std::abs(v - target) <= rel * std::abs(target); }

}  // namespace

int main() {
  report(1, "scaling constant on the six-node connected graph", [] {
    Outcome o;
    const auto t0 = Clock::now();
    const double c = scale_model(testutil::six_connected()).component_constants.at(0);
    const double t = seconds_since(t0);
    o.check(std::abs(c - 0.4219) <= 5e-4, "c = " + num(c, 8) + " (0.4219 +- 5e-4)");
    o.check(t < 1.0, "time " + num(t, 3) + " s");
    return o;
  });

  report(2, "marginal variances on the six-node connected graph", [] {
    Outcome o;
    const auto t0 = Clock::now();
    const auto v = dense_vars(testutil::six_connected());
    const double t = seconds_since(t0);
    const std::vector<double> printed{0.53, 0.53, 0.19, 0.53, 0.44, 0.44};
    std::string got;
    bool ok = true;
    for (std::size_t i = 0; i < 6; ++i) {
      const double r = std::round(v[i] * 100.0) / 100.0;
      ok = ok && std::abs(r - printed[i]) < 1e-9;
      got += (i ? "," : "") + num(v[i], 4);
    }
    o.check(ok, "variances " + got);
    o.check(t < 1.0, "time " + num(t, 3) + " s");
    return o;
  });

  report(3, "marginal variances on the six-node disconnected graph", [] {
    Outcome o;
    const auto t0 = Clock::now();
    const auto v = dense_vars(testutil::six_disconnected());
    const double t = seconds_since(t0);
    bool tri = true;
    for (int i = 0; i < 3; ++i) tri = tri && std::abs(v[i] - 2.0 / 9.0) < 1e-10;
    o.check(tri, "triangle " + num(v[0], 6));
    o.check(std::abs(v[3] - 0.25) < 1e-10 && std::abs(v[4] - 0.25) < 1e-10, "pair " + num(v[3], 6));
    o.check(std::isinf(v[5]), "singleton " + num(v[5]));
    o.check(t < 1.0, "time " + num(t, 3) + " s");
    return o;
  });

  report(4, "kappa exponent", [] {
    Outcome o;
    const auto a = kappa_exponent(connected_components(testutil::six_disconnected()));
    const auto b = kappa_exponent(connected_components(Graph(1, {})));
    const auto c = kappa_exponent(connected_components(testutil::six_connected()));
    o.check(a.str() == "2", "disconnected " + a.str());
    o.check(b.str() == "1/2", "single node " + b.str());
    o.check(c.str() == "5/2", "connected " + c.str());
    std::mt19937_64 rng(2024);
    int bad = 0;
    for (int t = 0; t < 500; ++t) {
      const std::size_t n = 1 + rng() % 80;
      const double p = std::uniform_real_distribution<double>(0.0, 0.1)(rng);
      const auto part = connected_components(testutil::random_graph(n, p, rng));
      bad += kappa_exponent(part).twice != static_cast<long long>(n - part.non_singleton_count());
    }
    o.check(bad == 0, "500 random graphs, " + std::to_string(bad) + " mismatches");
    return o;
  });

  report(5, "sparse path agrees with the dense oracle and scales subcubically", [] {
    Outcome o;
    std::mt19937_64 rng(55);
    double worst = 0.0;
    std::size_t largest = 0;
    for (int k = 1; k <= 50; ++k) {
      const auto n = std::size_t(std::max(10.0, 2000.0 * (k / 50.0) * (k / 50.0)));
      const Graph g = testutil::spatial_graph(n, 3 + rng() % 4, rng);
      const auto r = structure_matrix(g);
      const auto p = connected_components(g);
      worst = std::max(worst, testutil::max_relative_error(marginal_variances_sparse(r, p), marginal_variances_dense(r, p)));
      largest = std::max(largest, n);
    }
    o.check(worst < 1e-4, "50 random connected graphs up to n = " + std::to_string(largest) + ", max rel err " + num(worst, 3));
    {
      const Graph g = testutil::lattice(30, 30);
      const auto r = structure_matrix(g);
      const auto p = connected_components(g);
      const double e = testutil::max_relative_error(marginal_variances_sparse(r, p), marginal_variances_dense(r, p));
      o.check(e < 1e-4, "30x30 lattice max rel err " + num(e, 3));
    }
    std::vector<double> ln, lt;
    std::string times;
    for (std::size_t side : {20, 30, 40, 50}) {
      const Graph g = testutil::lattice(side, side);
      const auto r = structure_matrix(g);
      const auto p = connected_components(g);
      int reps = 0;
      const auto t0 = Clock::now();
      do {
        marginal_variances_sparse(r, p);
        ++reps;
      } while (seconds_since(t0) < 0.3);
      const double t = seconds_since(t0) / reps;
      ln.push_back(std::log(double(side * side)));
      lt.push_back(std::log(t));
      times += (times.empty() ? "" : ",") + num(t * 1e3, 3);
    }
    const double mx = std::accumulate(ln.begin(), ln.end(), 0.0) / 4, my = std::accumulate(lt.begin(), lt.end(), 0.0) / 4;
    double sxy = 0.0, sxx = 0.0;
    for (int i = 0; i < 4; ++i) {
      sxy += (ln[i] - mx) * (lt[i] - my);
      sxx += (ln[i] - mx) * (ln[i] - mx);
    }
    const double slope = sxy / sxx;
    o.check(slope < 2.0, "lattice times (ms) " + times + " for n = 400,900,1600,2500, exponent " + num(slope, 3));
    return o;
  });

  const auto data = testutil::scotland_data();
  const Graph scot = testutil::load_graph("scotland.graph");
  std::optional<FitResult> scaled_fit;

  report(6, "Scotland scaled fit against the reference posterior means", [&] {
    Outcome o;
    const auto t0 = Clock::now();
    scaled_fit = fit_besag(data, scot, scotland_config(ModelKind::besag_scaled));
    const double t = seconds_since(t0);
    const auto& f = *scaled_fit;
    const double a = f.at("alpha").mean, b = f.at("beta[X]").mean, k = f.at("kappa").mean;
    const double r6 = f.at("r[6]").mean, r8 = f.at("r[8]").mean, r11 = f.at("r[11]").mean;
    o.check(std::abs(a + 0.25) <= 0.05, "alpha " + num(a) + " (-0.25 +- 0.05)");
    o.check(std::abs(b - 0.37) <= 0.05, "beta " + num(b) + " (0.37 +- 0.05)");
    o.check(within_rel(k, 3.97, 0.2), "kappa " + num(k) + " (3.97 +- 20%)");
    o.check(within_rel(r6, 2.87, 0.1), "r6 " + num(r6) + " (2.87 +- 10%)");
    o.check(within_rel(r8, 2.06, 0.1), "r8 " + num(r8) + " (2.06 +- 10%)");
    o.check(within_rel(r11, 2.32, 0.1), "r11 " + num(r11) + " (2.32 +- 10%)");
    o.check(t < 300.0, "time " + num(t, 3) + " s");
    return o;
  });

  report(7, "unscaled singleton risks exceed scaled ones, beta almost unchanged", [&] {
    Outcome o;
    if (!scaled_fit) scaled_fit = fit_besag(data, scot, scotland_config(ModelKind::besag_scaled));
    const auto u = fit_besag(data, scot, scotland_config(ModelKind::besag_unscaled));
    for (int node : {6, 8, 11}) {
      const std::string name = "r[" + std::to_string(node) + "]";
      const double su = u.at(name).mean, ss = scaled_fit->at(name).mean;
      o.check(su > ss, name + " unscaled " + num(su) + " > scaled " + num(ss));
    }
    const double db = std::abs(u.at("beta[X]").mean - scaled_fit->at("beta[X]").mean);
    o.check(db < 0.03, "|beta difference| " + num(db, 3));
    return o;
  });

  report(8, "Gaussian sub-model oracle and kappa Gibbs KS test", [] {
    Outcome o;
    std::mt19937_64 rng(808);
    const std::vector<std::pair<std::string, Graph>> graphs{
        {"six-connected", testutil::six_connected()},
        {"six-disconnected", testutil::six_disconnected()},
        {"lattice 4x5", testutil::lattice(4, 5)}};
    for (const auto& [label, g] : graphs) {
      const auto m = scale_model(g);
      const auto n = Eigen::Index(g.size());
      std::normal_distribution<double> z;
      Eigen::VectorXd y(n);
      for (Eigen::Index i = 0; i < n; ++i) y[i] = 1.5 * z(rng);
      FitConfig c;
      c.likelihood = Likelihood::gaussian;
      c.gaussian_sd = 0.7;
      c.fixed_kappa = 2.0;
      c.intercept = false;
      c.iterations = 100000;
      c.burn_in = 10000;
      c.thin = 5;
      c.seed = 81;
      c.keep_samples = true;
      DiseaseMappingData d;
      d.y.assign(y.data(), y.data() + n);
      d.expected.assign(g.size(), 1.0);
      d.covariates = Eigen::MatrixXd(n, 0);
      const auto res = fit_besag(d, m, c);

      Eigen::MatrixXd con = Eigen::MatrixXd::Zero(n, Eigen::Index(m.constraints.size()));
      for (std::size_t k = 0; k < m.constraints.size(); ++k)
        for (auto i : m.constraints[k]) con(Eigen::Index(i), Eigen::Index(k)) = 1.0;
      const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(con).householderQ() * Eigen::MatrixXd::Identity(n, n);
      const Eigen::MatrixXd t = q.rightCols(n - con.cols());
      const double s2 = c.gaussian_sd * c.gaussian_sd;
      const Eigen::MatrixXd prec = t.transpose() * (2.0 * m.scaled_R.dense() + Eigen::MatrixXd::Identity(n, n) / s2) * t;
      const Eigen::VectorXd mean = t * prec.llt().solve(t.transpose() * y / s2);
      double worst = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd col = res.samples.col(1 + i);
        std::vector<double> draws(col.data(), col.data() + col.size());
        worst = std::max(worst, std::abs(sample_mean(draws) - mean[i]) / batch_means_se(draws));
      }
      o.check(worst <= 3.0, label + " worst |mean error| " + num(worst, 3) + " SE");
    }
    const auto m = scale_model(testutil::six_connected());
    Eigen::VectorXd x(6);
    x << 0.4, -0.2, 0.1, -0.5, 0.3, -0.1;
    const GammaPriorSpec prior{1.0, 5e-5};
    const double shape = prior.shape + m.norm_info.kappa_exponent.value();
    const double rate = prior.rate + 0.5 * m.scaled_R.quadratic_form(x);
    const std::size_t nd = 100000;
    std::vector<double> k(nd);
    for (auto& v : k) v = draw_kappa_conditional(x, m, prior, rng);
    std::sort(k.begin(), k.end());
    double ks = 0.0;
    for (std::size_t i = 0; i < nd; ++i) {
      const double f = boost::math::gamma_p(shape, rate * k[i]);
      ks = std::max({ks, std::abs(f - double(i) / nd), std::abs(f - double(i + 1) / nd)});
    }
    const double crit = 1.628 / std::sqrt(double(nd));
    o.check(ks < crit, "KS " + num(ks, 3) + " < " + num(crit, 3));
    return o;
  });

  report(9, "prior identities", [] {
    Outcome o;
    for (const PcPriorSpec s : {PcPriorSpec{1.0, 0.01}, PcPriorSpec{0.1 / 0.31, 0.05}}) {
      const double p = pc_prior_precision_cdf(1.0 / (s.u * s.u), s);
      o.check(std::abs(p - s.tail_prob) <= 1e-6, "pc.prec P(sigma > " + num(s.u) + ") = " + num(p, 8));
    }
    const PcPhiPrior phi({0.5, 0.5}, make_bym2_spec(scale_model(testutil::load_graph("scotland.graph"))));
    const double below = phi.probability(0.0, 0.5), total = phi.probability(0.0, 1.0);
    o.check(std::abs(below - 0.5) <= 1e-4, "pc.phi P(phi < 0.5) = " + num(below, 8));
    o.check(std::abs(total - 1.0) <= 1e-4, "pc.phi total " + num(total, 8));
    return o;
  });

  report(10, "prior-sample variances", [] {
    Outcome o;
    const std::size_t nd = 100000, batches = 50, len = nd / batches;
    for (double kappa : {1.0, 2.5}) {
      const auto m = scale_model(testutil::six_connected());
      const auto x = sample_prior(m, kappa, 1010, nd);
      auto geo = [&](Eigen::Index from, Eigen::Index rows) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < 6; ++i) {
          const Eigen::VectorXd c = x.col(i).segment(from, rows);
          acc += std::log((c.array() - c.mean()).square().sum() / double(rows - 1));
        }
        return std::exp(acc / 6.0);
      };
      const double g = geo(0, Eigen::Index(nd));
      std::vector<double> per;
      for (std::size_t b = 0; b < batches; ++b) per.push_back(geo(Eigen::Index(b * len), Eigen::Index(len)));
      const double se = sample_sd(per) / std::sqrt(double(batches));
      o.check(std::abs(g - 1.0 / kappa) <= 3.0 * se,
              "kappa " + num(kappa) + ": geometric mean " + num(g, 6) + " vs " + num(1.0 / kappa, 6) + " (SE " + num(se, 2) + ")");
    }
    for (double kappa : {1.0, 2.5}) {
      const auto m = scale_model(testutil::six_disconnected());
      const auto x = sample_prior(m, kappa, 1011, nd);
      const Eigen::VectorXd c = x.col(5);
      const double v = (c.array() - c.mean()).square().sum() / double(nd - 1);
      const double se = (1.0 / kappa) * std::sqrt(2.0 / double(nd - 1));
      o.check(std::abs(v - 1.0 / kappa) <= 3.0 * se, "singleton variance " + num(v, 6) + " vs " + num(1.0 / kappa, 6) +
                                                         " (SE " + num(se, 2) + ")");
    }
    return o;
  });

  report(11, "unavailable two-model DIC comparison, substituted", [] {
    Outcome o;
    const auto d = dic({10.0, 14.0}, 11.0);
    o.check(d.dic == 13.0 && d.p_d == 1.0, "DIC arithmetic " + num(d.dic) + ", p_D " + num(d.p_d));
    const Graph g = testutil::lattice(8, 8);
    std::mt19937_64 rng(1111);
    std::normal_distribution<double> z(0.0, 0.3);
    DiseaseMappingData data;
    data.expected.assign(g.size(), 200.0);
    for (std::size_t i = 0; i < g.size(); ++i) data.y.push_back(std::poisson_distribution<int>(200.0 * std::exp(z(rng)))(rng));
    data.covariates = Eigen::MatrixXd(Eigen::Index(g.size()), 0);
    FitConfig c;
    c.model = ModelKind::bym2;
    c.prec_prior = PcPriorSpec{1.0, 0.01};
    c.phi_prior = PcPriorSpec{0.5, 0.5};
    c.iterations = 30000;
    c.burn_in = 10000;
    c.thin = 5;
    c.seed = 11;
    const auto res = fit_bym2(data, g, c);
    const double phi = res.at("phi").median;
    o.check(phi < 0.5, "BYM2 recovery on iid lattice data: phi median " + num(phi, 3));
    o.check(std::isfinite(res.dic), "BYM2 DIC " + num(res.dic, 6));
    o.details += "; the reference dataset is not bundled, criteria 8-10 carry the rest";
    return o;
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
