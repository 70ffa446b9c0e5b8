// Command-line front end: simulate panels from the factor designs, estimate
// any synthetic-control variant on a CSV panel, and run Monte Carlo grids.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "pcsc/json_io.hpp"
#include "pcsc/pcsc.hpp"

namespace fs = std::filesystem;
using namespace pcsc;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct SimulateArgs {
  std::string config_path;
  std::string out_path;
  int F = 1, K = 1, T = 200, T0 = 100;
  std::string regime = "stationary";
  std::string errors = "iid";
  double phi = 0.5;
  bool covariates = false;
  std::uint64_t seed = 0;
  double noise_scale = 1.0;
  double effect_factor_sd = 1.0;
  bool contaminated = false;
  double psi_scale = 0.6;
};

struct EstimateArgs {
  std::string panel_path;
  int t0 = 0;
  std::string method = "pi-s";
  std::string se = "robust";
  std::string bandwidth = "auto";
  std::string weights;
  std::vector<int> window;
  std::vector<int> lift;
  std::string out = "text";
  std::string series_path;
  bool extended = false;
  bool donor_proxies_post = false;
  double level = 0.95;
};

struct MonteCarloArgs {
  std::string config_path;
  int reps = -1;
  std::string out_dir = ".";
  std::string format = "csv";
  int jobs = 0;
};

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, "malformed JSON in " + path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

std::string truth_sidecar_path(const std::string& out) {
  const fs::path p(out);
  fs::path side = p;
  if (p.extension() == ".csv")
    side.replace_extension(".truth.json");
  else
    side += ".truth.json";
  return side.string();
}

int run_simulate(const SimulateArgs& args) {
  DgpConfig cfg;
  if (!args.config_path.empty()) {
    cfg = dgp_config_from_json(read_json_file(args.config_path));
  } else {
    cfg.F = args.F;
    cfg.K = args.K;
    cfg.T = args.T;
    cfg.T0 = args.T0;
    cfg.regime = parse_regime(args.regime);
    cfg.errors = parse_error_kind(args.errors);
    cfg.phi = args.phi;
    cfg.with_covariates = args.covariates;
    cfg.seed = args.seed;
    cfg.noise_scale = args.noise_scale;
    cfg.effect_factor_sd = args.effect_factor_sd;
    if (args.contaminated) cfg.contaminated = ContaminationConfig{args.psi_scale};
  }
  cfg.validate();
  std::cout << "config: " << to_json(cfg).dump() << "\n";

  DgpTruth truth;
  const Panel panel = simulate_dgp_full(cfg, &truth);
  save_panel(panel, args.out_path);
  write_text_file(truth_sidecar_path(args.out_path), to_json(truth).dump(2) + "\n");
  std::cout << "wrote " << args.out_path << " (" << panel.periods() << " periods, "
            << panel.n_donors() << " donors, " << panel.n_surrogates() << " surrogates)\n";
  std::cout << "wrote " << truth_sidecar_path(args.out_path) << "\n";
  return 0;
}

ordered_json resolved_estimate_config(const EstimateArgs& args) {
  ordered_json j;
  j["panel"] = args.panel_path;
  j["t0"] = args.t0;
  j["method"] = args.method;
  j["se"] = args.se;
  j["bandwidth"] = args.bandwidth;
  j["weights"] = args.weights.empty() ? "auto" : args.weights;
  j["level"] = args.level;
  j["extended_instruments"] = args.extended;
  j["donor_proxies_post"] = args.donor_proxies_post;
  if (args.window.size() == 2) j["window"] = args.window;
  if (args.lift.size() == 2) j["lift"] = args.lift;
  j["out"] = args.out;
  return j;
}

// Tidy per-period series for external plotting: observed outcome, synthetic
// control level, their gap, and the surrogate-implied effect.
std::string series_csv(const MomentSystem& sys, const Panel& panel, const Eigen::VectorXd& theta) {
  std::ostringstream out;
  out << "t,y,synthetic,gap,surrogate_effect\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << ',' << buf;
  };
  for (int t = 0; t < panel.periods(); ++t) {
    out << (t + 1);
    put(panel.outcome(t));
    const double synth =
        sys.baseline_template ? sys.baseline_template->value(panel, t, theta) : 0.0;
    put(synth);
    put(panel.outcome(t) - synth);
    put(sys.effect_template.value(panel, t, theta));
    out << '\n';
  }
  return out.str();
}

// Flag-value problems are usage errors (exit 1), unlike data problems.
void validate_estimate_flags(const EstimateArgs& args) {
  try {
    parse_estimator(args.method);
  } catch (const Error&) {
    throw CLI::ValidationError("--method",
                               "must be one of sc|sc-s|pi|pi-p|pi-s|pi-s-cov|pi-s-contam");
  }
  if (args.se != "robust" && args.se != "hac")
    throw CLI::ValidationError("--se", "must be robust or hac");
  if (args.bandwidth != "auto" &&
      (args.bandwidth.empty() ||
       args.bandwidth.find_first_not_of("0123456789") != std::string::npos))
    throw CLI::ValidationError("--bandwidth", "must be auto or a nonnegative integer");
  if (!args.weights.empty() && args.weights != "identity" && args.weights != "twostep")
    throw CLI::ValidationError("--weights", "must be identity or twostep");
  if (args.out != "text" && args.out != "json")
    throw CLI::ValidationError("--out", "must be json or text");
}

int run_estimate(const EstimateArgs& args) {
  const ordered_json resolved = resolved_estimate_config(args);
  if (args.out == "text") std::cout << "config: " << resolved.dump() << "\n";

  const Panel panel = load_panel(args.panel_path, {.t0 = args.t0});
  const EstimatorKind kind = parse_estimator(args.method);
  InstrumentChoice g;
  g.extended = args.extended;
  g.donor_proxies_post = args.donor_proxies_post;
  MomentSystem sys = build_system(kind, panel, g);
  if (args.window.size() == 2) sys = add_window_att(std::move(sys), args.window[0], args.window[1]);
  if (args.lift.size() == 2) sys = add_lift(std::move(sys), args.lift[0], args.lift[1]);

  CovSpec cov = CovSpec::robust();
  if (args.se == "hac")
    cov = args.bandwidth == "auto" ? CovSpec::hac() : CovSpec::hac(std::stoi(args.bandwidth));

  WeightScheme w = default_weights(sys);
  if (args.weights == "identity")
    w = WeightScheme::identity();
  else if (args.weights == "twostep")
    w = WeightScheme::two_step();

  const GmmFit fit = solve(sys, panel, w, cov);

  ordered_json report;
  report["resolved_config"] = resolved;
  report["result"] = fit_to_json(fit, args.level);
  for (size_t k = 0; k < sys.layout.extras.size(); ++k)
    report["result"][sys.layout.extras[k]] = fit.theta.extra(static_cast<int>(k));
  report["instrument_spec"] = sys.instrument_spec();

  if (!args.series_path.empty())
    write_text_file(args.series_path, series_csv(sys, panel, fit.theta.values));

  if (args.out == "json") {
    std::cout << report.dump(2) << "\n";
  } else {
    const auto names = sys.layout.names();
    std::cout << "method: " << args.method << "  T=" << panel.periods() << "  T0=" << panel.t0
              << "  q=" << sys.q() << "  p=" << sys.p() << "  df=" << fit.df << "\n";
    char line[160];
    for (size_t i = 0; i < names.size(); ++i) {
      std::snprintf(line, sizeof line, "  %-12s % .6g  (se % .6g)", names[i].c_str(),
                    fit.theta.values(static_cast<int>(i)), fit.se(static_cast<int>(i)));
      std::cout << line << "\n";
    }
    const auto ci = confidence_interval(fit, sys.layout.tau_index(), args.level);
    std::snprintf(line, sizeof line, "tau: % .6g  se % .6g  %g%% CI [% .6g, % .6g]",
                  fit.tau_hat(), fit.tau_se(), 100.0 * args.level, ci.first, ci.second);
    std::cout << line << "\n";
    if (fit.df > 0 && fit.j_pvalue) {
      std::snprintf(line, sizeof line, "J = %.6g on %d df, p = %.6g", fit.J, fit.df,
                    *fit.j_pvalue);
      std::cout << line << "\n";
    }
    std::snprintf(line, sizeof line,
                  "converged: %s in %d iterations, grad %.3g; cond(S) %.3g cond(G) %.3g%s",
                  fit.converged ? "yes" : "NO", fit.iterations, fit.grad_norm, fit.s_cond,
                  fit.g_cond, fit.s_clipped ? " [S clipped to PSD]" : "");
    std::cout << line << "\n";
  }
  if (!fit.converged) {
    std::cerr << "error: solver did not converge (gradient norm " << fit.grad_norm << ")\n";
    return kExitNumerical;
  }
  return 0;
}

int run_montecarlo(const MonteCarloArgs& args) {
  McConfig cfg = mc_config_from_json(read_json_file(args.config_path));
  if (args.reps >= 0) cfg.reps = args.reps;
  if (args.jobs > 0) cfg.jobs = args.jobs;
  if (cfg.reps < 1) {
    std::cerr << "error: --reps must be >= 1\n";
    return kExitUsage;
  }
  cfg.validate();
  std::cout << "config: " << to_json(cfg).dump() << "\n";

  const McReport report = run_mc(cfg);

  fs::create_directories(args.out_dir);
  const fs::path dir(args.out_dir);
  if (args.format == "markdown")
    write_text_file((dir / "report.md").string(), emit_table(report, TableFormat::Markdown));
  else if (args.format == "csv")
    write_text_file((dir / "report.csv").string(), emit_table(report, TableFormat::Csv));
  else
    throw Error(ErrorCode::BadConfig, "--format must be csv or markdown");
  write_text_file((dir / "results.json").string(), report_to_json(report).dump(2) + "\n");

  std::cout << "cells=" << cfg.cells.size() << " methods=" << cfg.methods.size()
            << " reps=" << cfg.reps << "\n";
  std::cout << "elapsed: " << report.elapsed_seconds << " s, failures: " << report.total_failures
            << "\n";
  std::cout << "wrote " << (dir / (args.format == "markdown" ? "report.md" : "report.csv")).string()
            << " and " << (dir / "results.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Proximal synthetic control with surrogates"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic panel CSV");
  simulate->add_option("--config", sim.config_path, "JSON config (overrides inline flags)");
  simulate->add_option("--F", sim.F, "donor factors");
  simulate->add_option("--K", sim.K, "surrogate factors");
  simulate->add_option("--T", sim.T, "total periods");
  simulate->add_option("--T0", sim.T0, "pre-treatment periods");
  simulate->add_option("--regime", sim.regime, "stationary|logtrend");
  simulate->add_option("--errors", sim.errors, "iid|ar1");
  simulate->add_option("--phi", sim.phi, "AR(1) coefficient");
  simulate->add_flag("--covariates", sim.covariates, "include measured covariates");
  simulate->add_option("--seed", sim.seed, "RNG seed");
  simulate->add_option("--noise-scale", sim.noise_scale, "idiosyncratic error scale");
  simulate->add_option("--effect-factor-sd", sim.effect_factor_sd, "surrogate factor sd");
  simulate->add_flag("--contaminated", sim.contaminated, "contaminated surrogates");
  simulate->add_option("--psi-scale", sim.psi_scale, "contamination loading scale");
  simulate->add_option("--out", sim.out_path, "output CSV path")->required();

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "Fit an estimator on a panel CSV");
  estimate->add_option("--panel", est.panel_path, "panel CSV")->required();
  estimate->add_option("--t0", est.t0, "last pre-treatment period")->required();
  estimate->add_option("--method", est.method, "sc|sc-s|pi|pi-p|pi-s|pi-s-cov|pi-s-contam");
  estimate->add_option("--se", est.se, "robust|hac");
  estimate->add_option("--bandwidth", est.bandwidth, "auto or integer >= 0");
  estimate->add_option("--weights", est.weights, "identity|twostep (default by df)");
  estimate->add_option("--window", est.window, "window ATT bounds t1 t2 (exclusive)")->expected(2);
  estimate->add_option("--lift", est.lift, "percentage-lift bounds t1 t2 (exclusive)")->expected(2);
  estimate->add_option("--level", est.level, "confidence level");
  estimate->add_flag("--extended-instruments", est.extended,
                     "append constant and squared proxies (enables J-test)");
  estimate->add_flag("--donor-proxies-post", est.donor_proxies_post,
                     "include donor proxies in the post-period instruments");
  estimate->add_option("--series", est.series_path, "write per-period series CSV here");
  estimate->add_option("--out", est.out, "json|text");

  MonteCarloArgs mc;
  auto* montecarlo = app.add_subcommand("montecarlo", "Run a Monte Carlo grid");
  montecarlo->add_option("--config", mc.config_path, "JSON experiment config")->required();
  montecarlo->add_option("--reps", mc.reps, "replications (overrides config)");
  montecarlo->add_option("--out-dir", mc.out_dir, "output directory");
  montecarlo->add_option("--format", mc.format, "csv|markdown");
  montecarlo->add_option("--jobs", mc.jobs, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim);
    if (estimate->parsed()) {
      validate_estimate_flags(est);
      return run_estimate(est);
    }
    if (montecarlo->parsed()) return run_montecarlo(mc);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.numerical() ? kExitNumerical : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
