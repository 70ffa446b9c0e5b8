#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pcsc/dgp.hpp"
#include "pcsc/gmm.hpp"
#include "pcsc/moment_systems.hpp"

namespace pcsc {

inline MomentSystem build_system(EstimatorKind kind, const Panel& panel,
                                 const InstrumentChoice& g = {}) {
  switch (kind) {
    case EstimatorKind::Sc: return build_sc(panel);
    case EstimatorKind::ScS: return build_sc_s(panel);
    case EstimatorKind::Pi: return build_pi(panel);
    case EstimatorKind::PiP: return build_pi_p(panel);
    case EstimatorKind::PiS: return build_pi_s(panel, g);
    case EstimatorKind::PiSCov: return build_pi_s_cov(panel);
    case EstimatorKind::PiSContam: return build_pi_s_contam(panel);
  }
  throw Error(ErrorCode::BadConfig, "unknown estimator kind");
}

struct McCell {
  int K = 1;  // surrogate factors; donor factors F = K per the table layout
  int T = 200;
};

struct McConfig {
  std::vector<McCell> cells;
  DgpConfig base;  // T0, regime, error kind, covariates, noise; seed is ignored
  std::vector<EstimatorKind> methods;
  std::vector<CovSpec> cov_specs;
  InstrumentChoice instruments;
  int reps = 2000;
  double level = 0.95;
  std::uint64_t base_seed = 1;
  int jobs = 0;  // 0 = hardware concurrency

  void validate() const {
    if (cells.empty()) throw Error(ErrorCode::BadConfig, "no grid cells");
    if (methods.empty()) throw Error(ErrorCode::BadConfig, "no methods");
    if (cov_specs.empty()) throw Error(ErrorCode::BadConfig, "no covariance specs");
    if (reps < 1) throw Error(ErrorCode::BadConfig, "reps must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::BadConfig, "level in (0,1)");
    for (const auto& m : methods) {
      if (m == EstimatorKind::PiSCov && !base.with_covariates)
        throw Error(ErrorCode::BadConfig, "pi-s-cov needs with_covariates in the base design");
      if (m == EstimatorKind::PiSContam && !base.contaminated)
        throw Error(ErrorCode::BadConfig, "pi-s-contam needs a contaminated base design");
    }
  }
};

struct McStats {
  double mse = 0.0;
  double mse_mc_se = 0.0;   // jackknife standard error of the MSE estimate
  double mse_trimmed = 0.0; // converged replications only
  double bias = 0.0;
  double coverage = 0.0;
  double mean_se = 0.0;
  int n_used = 0;
  int n_nonconverged = 0;
  int n_failed = 0;
};

struct McReport {
  McConfig config;
  // stats[cell][method][cov_spec]
  std::vector<std::vector<std::vector<McStats>>> stats;
  double elapsed_seconds = 0.0;
  int total_failures = 0;
};

namespace mc_detail {

struct RepResult {
  bool failed = true;
  bool converged = false;
  double tau = 0.0;
  // per cov spec
  std::vector<double> se;
  std::vector<bool> covered;
};

inline DgpConfig cell_config(const McConfig& cfg, const McCell& cell, std::uint64_t rep) {
  DgpConfig d = cfg.base;
  d.F = cell.K;
  d.K = cell.K;
  d.T = cell.T;
  d.seed = cfg.base_seed ^ rep;  // replication stream
  return d;
}

// One replication of one grid cell: every method sees the same panel.
inline void run_rep(const McConfig& cfg, const McCell& cell, std::uint64_t rep,
                    std::vector<RepResult>* out) {
  const DgpConfig dcfg = cell_config(cfg, cell, rep);
  Panel panel = simulate_dgp_full(dcfg);
  const double z = stats::normal_quantile(0.5 * (1.0 + cfg.level));
  const int n_specs = static_cast<int>(cfg.cov_specs.size());

  for (size_t m = 0; m < cfg.methods.size(); ++m) {
    RepResult& r = (*out)[m];
    r.se.assign(n_specs, 0.0);
    r.covered.assign(n_specs, false);
    try {
      const MomentSystem sys = build_system(cfg.methods[m], panel, cfg.instruments);
      const GmmFit fit = solve(sys, panel, default_weights(sys), cfg.cov_specs.front());
      r.tau = fit.tau_hat();
      r.converged = fit.converged;
      r.failed = !std::isfinite(r.tau);
      const int tau_idx = fit.theta.layout.tau_index();
      for (int s = 0; s < n_specs; ++s) {
        Eigen::MatrixXd S = (s == 0) ? fit.S_hat
                                     : estimate_S(sys, panel, fit.theta.values,
                                                  cfg.cov_specs[s]);
        const Eigen::MatrixXd v = sandwich(fit.G_hat, S, fit.omega, panel.periods());
        const double se = std::sqrt(std::max(0.0, v(tau_idx, tau_idx)));
        r.se[s] = se;
        r.covered[s] = std::abs(r.tau - 1.0) <= z * se;
      }
    } catch (const Error&) {
      r.failed = true;
    }
  }
}

}  // namespace mc_detail

// Runs the full grid. Replication r uses stream base_seed ^ r, shared by all
// methods within the replication (paired design). Results are deterministic
// for a given config regardless of the number of worker threads: each
// replication writes to its own slot and aggregation runs in fixed order.
inline McReport run_mc(const McConfig& cfg) {
  using namespace mc_detail;
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();

  const int n_cells = static_cast<int>(cfg.cells.size());
  const int n_methods = static_cast<int>(cfg.methods.size());
  const int n_specs = static_cast<int>(cfg.cov_specs.size());

  // results[cell][rep][method]
  std::vector<std::vector<std::vector<RepResult>>> results(n_cells);
  for (auto& c : results)
    c.assign(cfg.reps, std::vector<RepResult>(n_methods));

  int jobs = cfg.jobs > 0 ? cfg.jobs : static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  const int total_tasks = n_cells * cfg.reps;
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int task = next.fetch_add(1);
      if (task >= total_tasks) return;
      const int cell = task / cfg.reps;
      const int rep = task % cfg.reps;
      run_rep(cfg, cfg.cells[cell], static_cast<std::uint64_t>(rep), &results[cell][rep]);
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  McReport report;
  report.config = cfg;
  report.stats.assign(n_cells, std::vector<std::vector<McStats>>(
                                   n_methods, std::vector<McStats>(n_specs)));
  for (int c = 0; c < n_cells; ++c) {
    for (int m = 0; m < n_methods; ++m) {
      for (int s = 0; s < n_specs; ++s) {
        McStats& st = report.stats[c][m][s];
        std::vector<double> sq_err;
        double sum_tau = 0.0, sum_se = 0.0, sum_sq_trim = 0.0;
        int covered = 0, trim_n = 0;
        for (int r = 0; r < cfg.reps; ++r) {
          const RepResult& rr = results[c][r][m];
          if (rr.failed) {
            ++st.n_failed;
            continue;
          }
          const double d = (rr.tau - 1.0) * (rr.tau - 1.0);
          sq_err.push_back(d);
          sum_tau += rr.tau;
          sum_se += rr.se[s];
          if (rr.covered[s]) ++covered;
          if (rr.converged) {
            sum_sq_trim += d;
            ++trim_n;
          } else {
            ++st.n_nonconverged;
          }
        }
        st.n_used = static_cast<int>(sq_err.size());
        if (st.n_used > 0) {
          double mean_sq = 0.0;
          for (double d : sq_err) mean_sq += d;
          mean_sq /= st.n_used;
          st.mse = mean_sq;
          st.bias = sum_tau / st.n_used - 1.0;
          st.coverage = static_cast<double>(covered) / st.n_used;
          st.mean_se = sum_se / st.n_used;
          st.mse_trimmed = trim_n > 0 ? sum_sq_trim / trim_n : 0.0;
          if (st.n_used > 1) {
            // Jackknife over replications; for a sample mean this equals the
            // classic standard error of the mean.
            const int n = st.n_used;
            double acc = 0.0;
            for (double d : sq_err) {
              const double loo = (mean_sq * n - d) / (n - 1);
              acc += (loo - mean_sq) * (loo - mean_sq);
            }
            st.mse_mc_se = std::sqrt(acc * (n - 1) / n);
          }
        }
      }
    }
  }
  for (int c = 0; c < n_cells; ++c)
    for (int m = 0; m < n_methods; ++m) report.total_failures += report.stats[c][m][0].n_failed;
  report.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

enum class TableFormat { Csv, Markdown };

namespace mc_detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace mc_detail

// Markdown: one table per metric, rows (cov_spec, cell), columns methods --
// MSE/bias/mean-SE with three decimals, coverage as a two-decimal percentage.
// CSV: long format at full precision including Monte Carlo standard errors.
inline std::string emit_table(const McReport& report, TableFormat format) {
  using mc_detail::fmt;
  const auto& cfg = report.config;
  std::ostringstream out;
  if (format == TableFormat::Csv) {
    out << "cov_spec,K,T,method,mse,mse_mc_se,mse_trimmed,bias,coverage,mean_se,"
           "n_used,n_nonconverged,n_failed\n";
    for (size_t s = 0; s < cfg.cov_specs.size(); ++s)
      for (size_t c = 0; c < cfg.cells.size(); ++c)
        for (size_t m = 0; m < cfg.methods.size(); ++m) {
          const McStats& st = report.stats[c][m][s];
          out << cfg.cov_specs[s].describe() << ',' << cfg.cells[c].K << ',' << cfg.cells[c].T
              << ',' << estimator_name(cfg.methods[m]) << ',' << fmt("%.17g", st.mse) << ','
              << fmt("%.17g", st.mse_mc_se) << ',' << fmt("%.17g", st.mse_trimmed) << ','
              << fmt("%.17g", st.bias) << ',' << fmt("%.17g", st.coverage) << ','
              << fmt("%.17g", st.mean_se) << ',' << st.n_used << ',' << st.n_nonconverged << ','
              << st.n_failed << '\n';
        }
    return out.str();
  }

  struct Metric {
    const char* title;
    double McStats::*field;
    bool percent;
  };
  const Metric metrics[] = {
      {"MSE", &McStats::mse, false},
      {"Coverage", &McStats::coverage, true},
      {"Bias", &McStats::bias, false},
      {"Mean SE", &McStats::mean_se, false},
  };
  for (const auto& metric : metrics) {
    out << "## " << metric.title << "\n\n";
    out << "| SE | (K,T) |";
    for (const auto& m : cfg.methods) out << ' ' << estimator_name(m) << " |";
    out << "\n|---|---|";
    for (size_t m = 0; m < cfg.methods.size(); ++m) out << "---|";
    out << '\n';
    for (size_t s = 0; s < cfg.cov_specs.size(); ++s)
      for (size_t c = 0; c < cfg.cells.size(); ++c) {
        out << "| " << cfg.cov_specs[s].describe() << " | (" << cfg.cells[c].K << ','
            << cfg.cells[c].T << ") |";
        for (size_t m = 0; m < cfg.methods.size(); ++m) {
          const double v = report.stats[c][m][s].*metric.field;
          out << ' ' << (metric.percent ? fmt("%.2f", 100.0 * v) + "%" : fmt("%.3f", v)) << " |";
        }
        out << '\n';
      }
    out << '\n';
  }
  return out.str();
}

}  // namespace pcsc
