#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "pcsc/json_io.hpp"
#include "pcsc/monte_carlo.hpp"

using namespace pcsc;

namespace {

McConfig small_config() {
  McConfig cfg;
  cfg.cells = {{1, 60}};
  cfg.base.T0 = 30;
  cfg.base.seed = 0;
  cfg.methods = {EstimatorKind::Pi, EstimatorKind::PiS};
  cfg.cov_specs = {CovSpec::robust()};
  cfg.reps = 1;
  cfg.base_seed = 12345;
  cfg.jobs = 1;
  return cfg;
}

}  // namespace

TEST_CASE("single replication: mse is the squared error, coverage is 0 or 1") {
  const McConfig cfg = small_config();
  const McReport rep = run_mc(cfg);

  // recompute by hand from the same replication stream
  DgpConfig d = cfg.base;
  d.F = 1;
  d.K = 1;
  d.T = 60;
  d.seed = cfg.base_seed ^ 0ull;
  const Panel panel = simulate_dgp_full(d);
  for (size_t m = 0; m < cfg.methods.size(); ++m) {
    const auto sys = build_system(cfg.methods[m], panel);
    const GmmFit fit = solve(sys, panel, default_weights(sys), cfg.cov_specs[0]);
    const McStats& st = rep.stats[0][m][0];
    CHECK(st.n_used == 1);
    CHECK(st.mse == Catch::Approx((fit.tau_hat() - 1.0) * (fit.tau_hat() - 1.0)).epsilon(1e-12));
    CHECK((st.coverage == 0.0 || st.coverage == 1.0));
    CHECK(st.bias == Catch::Approx(fit.tau_hat() - 1.0).epsilon(1e-12));
  }
}

TEST_CASE("identical config gives identical reports regardless of thread count") {
  McConfig cfg = small_config();
  cfg.reps = 24;
  cfg.methods = {EstimatorKind::Sc, EstimatorKind::Pi, EstimatorKind::PiS};
  cfg.cov_specs = {CovSpec::robust(), CovSpec::hac()};
  cfg.jobs = 1;
  const McReport a = run_mc(cfg);
  cfg.jobs = 2;
  const McReport b = run_mc(cfg);
  for (size_t m = 0; m < cfg.methods.size(); ++m)
    for (size_t s = 0; s < cfg.cov_specs.size(); ++s) {
      CHECK(a.stats[0][m][s].mse == b.stats[0][m][s].mse);
      CHECK(a.stats[0][m][s].coverage == b.stats[0][m][s].coverage);
      CHECK(a.stats[0][m][s].mean_se == b.stats[0][m][s].mean_se);
    }
}

TEST_CASE("per-replication failures are recorded, never abort the run") {
  McConfig cfg;
  cfg.cells = {{1, 31}};
  cfg.base.T0 = 30;  // single post period: pi-p is rank deficient
  cfg.methods = {EstimatorKind::PiP, EstimatorKind::PiS};
  cfg.cov_specs = {CovSpec::robust()};
  cfg.reps = 5;
  cfg.base_seed = 5;
  cfg.jobs = 1;
  const McReport rep = run_mc(cfg);
  CHECK(rep.stats[0][0][0].n_failed == 5);
  CHECK(rep.stats[0][0][0].n_used == 0);
  CHECK(rep.stats[0][1][0].n_failed == 0);
  CHECK(rep.stats[0][1][0].n_used == 5);
  CHECK(rep.total_failures == 5);
}

TEST_CASE("mc standard error of the mse is the classic jackknife value") {
  McConfig cfg = small_config();
  cfg.reps = 40;
  cfg.methods = {EstimatorKind::PiS};
  const McReport rep = run_mc(cfg);
  const McStats& st = rep.stats[0][0][0];
  CHECK(st.n_used == 40);
  CHECK(st.mse_mc_se > 0.0);
  CHECK(st.mse >= st.bias * st.bias - 1e-12);
}

TEST_CASE("table emission") {
  McConfig cfg;
  cfg.cells = {{1, 60}, {2, 80}};
  cfg.base.T0 = 30;
  cfg.methods = {EstimatorKind::Sc, EstimatorKind::ScS, EstimatorKind::Pi, EstimatorKind::PiP,
                 EstimatorKind::PiS};
  cfg.cov_specs = {CovSpec::robust(), CovSpec::hac()};
  cfg.reps = 3;
  cfg.base_seed = 777;
  cfg.jobs = 2;
  const McReport rep = run_mc(cfg);

  const std::string md = emit_table(rep, TableFormat::Markdown);
  const std::string csv = emit_table(rep, TableFormat::Csv);

  SECTION("markdown shape: 4 data rows by 5 value columns per metric") {
    std::istringstream in(md);
    std::string line;
    int mse_rows = 0;
    bool in_mse = false;
    while (std::getline(in, line)) {
      if (line.rfind("## ", 0) == 0) in_mse = line == "## MSE";
      if (in_mse && line.rfind("| robust", 0) == 0) ++mse_rows;
      if (in_mse && line.rfind("| hac", 0) == 0) ++mse_rows;
    }
    CHECK(mse_rows == 4);
    CHECK(md.find("| sc |") != std::string::npos);
  }

  SECTION("csv carries one row per (spec, cell, method) plus header") {
    std::istringstream in(csv);
    std::string line;
    int rows = 0;
    while (std::getline(in, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 1 + 2 * 2 * 5);
  }

  SECTION("coverage is printed as a two-decimal percentage") {
    CHECK(md.find('%') != std::string::npos);
    // every coverage cell ends with %
    std::istringstream in(md);
    std::string line;
    bool in_cov = false;
    while (std::getline(in, line)) {
      if (line.rfind("## ", 0) == 0) in_cov = line == "## Coverage";
      if (in_cov && line.rfind("| robust", 0) == 0) {
        CHECK(line.find('%') != std::string::npos);
      }
    }
  }

  SECTION("markdown values round-trip to the CSV values") {
    // parse the markdown MSE table back and compare against csv at the
    // printed precision
    std::istringstream in(md);
    std::string line;
    bool in_mse = false;
    std::vector<std::vector<double>> md_vals;
    while (std::getline(in, line)) {
      if (line.rfind("## ", 0) == 0) in_mse = line == "## MSE";
      if (in_mse && (line.rfind("| robust", 0) == 0 || line.rfind("| hac", 0) == 0)) {
        // split on pipes: field 0 is empty, 1 = SE label, 2 = cell, 3.. = values
        std::vector<std::string> fields;
        std::string field;
        std::istringstream fs(line);
        while (std::getline(fs, field, '|')) fields.push_back(field);
        std::vector<double> row;
        for (size_t i = 3; i < fields.size(); ++i) row.push_back(std::stod(fields[i]));
        md_vals.push_back(row);
      }
    }
    REQUIRE(md_vals.size() == 4);

    std::istringstream cin(csv);
    std::getline(cin, line);  // header
    std::vector<double> csv_mse;
    while (std::getline(cin, line)) {
      std::istringstream ls(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      csv_mse.push_back(std::stod(cells[4]));
    }
    REQUIRE(csv_mse.size() == 20);
    int k = 0;
    for (const auto& row : md_vals) {
      REQUIRE(row.size() == 5);
      for (double v : row) {
        CHECK(std::abs(v - csv_mse[k]) <= 5e-4 + 1e-12);  // %.3f rounding
        ++k;
      }
    }
  }
}

TEST_CASE("config json round-trip") {
  McConfig cfg;
  cfg.cells = {{1, 400}, {5, 800}};
  cfg.base.T0 = 100;
  cfg.base.regime = FactorRegime::LogTrend;
  cfg.base.errors = ErrorKind::Ar1;
  cfg.base.phi = 0.25;
  cfg.base.with_covariates = true;
  cfg.methods = {EstimatorKind::Pi, EstimatorKind::PiSCov};
  cfg.cov_specs = {CovSpec::robust(), CovSpec::hac(7)};
  cfg.instruments.extended = true;
  cfg.reps = 11;
  cfg.level = 0.9;
  cfg.base_seed = 31;
  const auto j = to_json(cfg);
  const McConfig back = mc_config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.cells.size() == 2);
  CHECK(back.cells[1].K == 5);
  CHECK(back.base.regime == FactorRegime::LogTrend);
  CHECK(back.base.errors == ErrorKind::Ar1);
  CHECK(back.base.phi == 0.25);
  CHECK(back.base.with_covariates);
  CHECK(back.methods[1] == EstimatorKind::PiSCov);
  CHECK(back.cov_specs[1].tag == CovSpec::Tag::Hac);
  CHECK(back.cov_specs[1].bandwidth == 7);
  CHECK(back.instruments.extended);
  CHECK(back.reps == 11);
  CHECK(back.level == 0.9);
  CHECK(back.base_seed == 31);
}

TEST_CASE("harness runs contaminated designs") {
  McConfig cfg;
  cfg.cells = {{1, 80}};
  cfg.base.T0 = 40;
  cfg.base.contaminated = ContaminationConfig{0.5};
  cfg.methods = {EstimatorKind::PiSContam};
  cfg.cov_specs = {CovSpec::robust()};
  cfg.reps = 6;
  cfg.base_seed = 17;
  cfg.jobs = 1;
  const McReport rep = run_mc(cfg);
  const McStats& st = rep.stats[0][0][0];
  CHECK(st.n_used == 6);
  CHECK(st.n_failed == 0);
  CHECK(std::isfinite(st.mse));
  CHECK(st.mean_se > 0.0);

  McConfig bad = cfg;
  bad.base.contaminated.reset();
  CHECK_THROWS_AS(run_mc(bad), Error);  // pi-s-contam needs a contaminated base
}

TEST_CASE("contaminated dgp config round-trips through json") {
  DgpConfig cfg;
  cfg.F = 2;
  cfg.K = 3;
  cfg.noise_scale = 0.25;
  cfg.effect_factor_sd = 0.0;
  cfg.contaminated = ContaminationConfig{0.45};
  const auto j = to_json(cfg);
  const DgpConfig back = dgp_config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.F == 2);
  CHECK(back.K == 3);
  CHECK(back.noise_scale == 0.25);
  CHECK(back.effect_factor_sd == 0.0);
  REQUIRE(back.contaminated.has_value());
  CHECK(back.contaminated->theta_loading_scale == 0.45);
}

TEST_CASE("mse ordering sanity at the long-horizon stationary cell") {
  McConfig cfg;
  cfg.cells = {{1, 800}};
  cfg.base.T0 = 100;
  cfg.methods = {EstimatorKind::Pi, EstimatorKind::PiP, EstimatorKind::PiS};
  cfg.cov_specs = {CovSpec::robust()};
  cfg.reps = 300;
  cfg.base_seed = 2024;
  const McReport rep = run_mc(cfg);
  const McStats& pi = rep.stats[0][0][0];
  const McStats& pip = rep.stats[0][1][0];
  const McStats& pis = rep.stats[0][2][0];
  const double slack_s = 3.0 * (pi.mse_mc_se + pis.mse_mc_se);
  const double slack_p = 3.0 * (pi.mse_mc_se + pip.mse_mc_se);
  CHECK(pis.mse <= pi.mse + slack_s);
  CHECK(pip.mse <= pi.mse + slack_p);
}
