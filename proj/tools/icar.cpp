// icar: components | scale | fit | simulate | prior-check

#include <CLI11.hpp>

#include <iostream>

#include "icar/cli.hpp"

namespace {

// Fills the optional-valued fields only when the flag was given.
template <class T>
void bind_optional(CLI::App& app, const std::string& flag, std::optional<T>& target, const std::string& help) {
  app.add_option_function<T>(flag, [&target](const T& v) { target = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  using icar::cli::Options;
  Options o;
  std::string isolate;

  CLI::App app{"Scaled intrinsic CAR models for disease mapping"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--graph", o.graph_path, "adjacency file");
    sub->add_option("--config", o.config_path, "JSON run configuration");
    sub->add_option("--out", o.output_dir, "output directory");
    sub->add_option("--isolate", isolate, "comma-separated 1-based nodes whose edges are removed");
    bind_optional(*sub, "--seed", o.seed, "random seed");
    bind_optional(*sub, "--model", o.model, "besag-scaled | besag-unscaled | bym2");
  };

  auto* components = app.add_subcommand("components", "list connected components");
  add_common(components);
  auto* scale = app.add_subcommand("scale", "write the scaled structure matrix and constants");
  add_common(scale);
  auto* fit = app.add_subcommand("fit", "MCMC fit of a disease-mapping model");
  add_common(fit);
  fit->add_option("--data", o.data_path, "CSV with Counts, E, covariates and Region");
  bind_optional(*fit, "--iterations", o.iterations, "total iterations");
  bind_optional(*fit, "--burn-in", o.burn_in, "adaptive burn-in iterations");
  bind_optional(*fit, "--thin", o.thin, "keep every k-th draw");
  bind_optional(*fit, "--chains", o.chains, "independent chains run in parallel");
  auto* simulate = app.add_subcommand("simulate", "draw from the constrained prior");
  add_common(simulate);
  bind_optional(*simulate, "--kappa", o.kappa, "precision");
  bind_optional(*simulate, "--draws", o.draws, "number of draws");
  auto* prior_check = app.add_subcommand("prior-check", "density grids and tail probabilities of the priors");
  add_common(prior_check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << icar::cli::error_json("input", 2, e.what()).dump() << '\n';
    return 2;
  }

  o.command = app.get_subcommands().front()->get_name();
  if (!isolate.empty()) {
    std::vector<std::size_t> nodes;
    std::stringstream ss(isolate);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(item, &used);
        if (used != item.size() || v < 1) throw std::invalid_argument(item);
        nodes.push_back(static_cast<std::size_t>(v));
      } catch (const std::exception&) {
        std::cerr << icar::cli::error_json("input", 2, "--isolate: not a node number: '" + item + "'").dump() << '\n';
        return 2;
      }
    }
    o.isolate = nodes;
  }
  return icar::cli::run(o, std::cout, std::cerr);
}
