#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "latmark/commands.hpp"

int main(int argc, char** argv) {
  using namespace latmark;
  CLI::App app{"Latent Markov models: fit, simulate, decode and forecast"};
  app.require_subcommand(1);

  CommandOptions o;
  o.threads = default_threads();
  std::uint64_t seed = 0;
  double level = 0.0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "model configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--threads", o.threads, "worker threads (default: LATMARK_THREADS or 1)")->check(CLI::PositiveNumber);
  };

  CLI::App* fit = app.add_subcommand("fit", "maximum likelihood fit");
  common(fit);
  fit->add_option("--data", o.data, "input CSV")->required()->check(CLI::ExistingFile);
  fit->add_flag("--per-id", o.per_id, "fit each id separately");
  fit->add_option("--level", level, "interval coverage")->check(CLI::Range(0.0, 1.0));

  CLI::App* sim = app.add_subcommand("simulate", "draw data and latent truth from the configured parameters");
  common(sim);
  sim->add_option("--data", o.data, "CSV supplying observation times and covariates")->check(CLI::ExistingFile);
  sim->add_option("--seed", seed, "random seed (overrides simulate.seed)");

  CLI::App* dec = app.add_subcommand("decode", "Viterbi decoding under fitted estimates");
  common(dec);
  dec->add_option("--data", o.data, "input CSV")->required()->check(CLI::ExistingFile);
  dec->add_option("--estimates", o.estimates, "fit.json from the fit command")->required()->check(CLI::ExistingFile);

  CLI::App* fc = app.add_subcommand("forecast", "one-step-ahead forecast distribution and rolling quantile backtest");
  common(fc);
  fc->add_option("--data", o.data, "input CSV")->required()->check(CLI::ExistingFile);
  fc->add_option("--estimates", o.estimates, "fit.json from the fit command")->required()->check(CLI::ExistingFile);
  fc->add_option("--level", level, "lower quantile level")->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitInputError;
  }

  CLI::App* chosen = app.get_subcommands().front();
  if (chosen == sim && chosen->count("--seed")) o.seed = seed;
  if ((chosen == fit || chosen == fc) && chosen->count("--level")) o.level = level;

  try {
    if (chosen == fit) return cmd_fit(o);
    if (chosen == sim) return cmd_simulate(o);
    if (chosen == dec) return cmd_decode(o);
    return cmd_forecast(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInputError;
  }
}
