#pragma once

#include <nlohmann/json.hpp>

#include "pcsc/dgp.hpp"
#include "pcsc/gmm.hpp"
#include "pcsc/monte_carlo.hpp"

// JSON bindings for the config and report types. Keys mirror the struct field
// names; enums serialize as lowercase strings.

namespace pcsc {

using ordered_json = nlohmann::ordered_json;

inline ordered_json to_json(const DgpConfig& cfg) {
  ordered_json j;
  j["F"] = cfg.F;
  j["K"] = cfg.K;
  j["T"] = cfg.T;
  j["T0"] = cfg.T0;
  j["regime"] = cfg.regime == FactorRegime::Stationary ? "stationary" : "logtrend";
  j["errors"] = cfg.errors == ErrorKind::Iid ? "iid" : "ar1";
  j["phi"] = cfg.phi;
  j["with_covariates"] = cfg.with_covariates;
  j["seed"] = cfg.seed;
  j["noise_scale"] = cfg.noise_scale;
  j["effect_factor_sd"] = cfg.effect_factor_sd;
  if (cfg.contaminated) {
    j["contaminated"] = {{"theta_loading_scale", cfg.contaminated->theta_loading_scale}};
  }
  return j;
}

inline FactorRegime parse_regime(const std::string& s) {
  if (s == "stationary") return FactorRegime::Stationary;
  if (s == "logtrend") return FactorRegime::LogTrend;
  throw Error(ErrorCode::BadConfig, "regime must be 'stationary' or 'logtrend', got '" + s + "'");
}

inline ErrorKind parse_error_kind(const std::string& s) {
  if (s == "iid") return ErrorKind::Iid;
  if (s == "ar1") return ErrorKind::Ar1;
  throw Error(ErrorCode::BadConfig, "errors must be 'iid' or 'ar1', got '" + s + "'");
}

inline DgpConfig dgp_config_from_json(const nlohmann::json& j) {
  DgpConfig cfg;
  try {
    if (j.contains("F")) cfg.F = j.at("F").get<int>();
    if (j.contains("K")) cfg.K = j.at("K").get<int>();
    if (j.contains("T")) cfg.T = j.at("T").get<int>();
    if (j.contains("T0")) cfg.T0 = j.at("T0").get<int>();
    if (j.contains("regime")) cfg.regime = parse_regime(j.at("regime").get<std::string>());
    if (j.contains("errors")) cfg.errors = parse_error_kind(j.at("errors").get<std::string>());
    if (j.contains("phi")) cfg.phi = j.at("phi").get<double>();
    if (j.contains("with_covariates")) cfg.with_covariates = j.at("with_covariates").get<bool>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("noise_scale")) cfg.noise_scale = j.at("noise_scale").get<double>();
    if (j.contains("effect_factor_sd"))
      cfg.effect_factor_sd = j.at("effect_factor_sd").get<double>();
    if (j.contains("contaminated") && !j.at("contaminated").is_null()) {
      ContaminationConfig cc;
      if (j.at("contaminated").contains("theta_loading_scale"))
        cc.theta_loading_scale = j.at("contaminated").at("theta_loading_scale").get<double>();
      cfg.contaminated = cc;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("bad DGP config: ") + e.what());
  }
  return cfg;
}

inline ordered_json to_json(const CovSpec& spec) {
  if (spec.tag == CovSpec::Tag::Robust) return "robust";
  if (spec.bandwidth < 0) return "hac";
  return ordered_json{{"hac", spec.bandwidth}};
}

inline CovSpec cov_spec_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "robust") return CovSpec::robust();
    if (s == "hac") return CovSpec::hac();
    throw Error(ErrorCode::BadConfig, "cov spec must be 'robust' or 'hac', got '" + s + "'");
  }
  if (j.is_object() && j.contains("hac")) return CovSpec::hac(j.at("hac").get<int>());
  throw Error(ErrorCode::BadConfig, "bad cov spec");
}

inline ordered_json to_json(const McConfig& cfg) {
  ordered_json j;
  ordered_json cells = ordered_json::array();
  for (const auto& c : cfg.cells) cells.push_back({{"K", c.K}, {"T", c.T}});
  j["cells"] = cells;
  j["base"] = to_json(cfg.base);
  ordered_json methods = ordered_json::array();
  for (const auto& m : cfg.methods) methods.push_back(estimator_name(m));
  j["methods"] = methods;
  ordered_json specs = ordered_json::array();
  for (const auto& s : cfg.cov_specs) specs.push_back(to_json(s));
  j["cov_specs"] = specs;
  j["instruments"] = {{"extended", cfg.instruments.extended},
                      {"donor_proxies_post", cfg.instruments.donor_proxies_post}};
  j["reps"] = cfg.reps;
  j["level"] = cfg.level;
  j["base_seed"] = cfg.base_seed;
  j["jobs"] = cfg.jobs;
  return j;
}

inline McConfig mc_config_from_json(const nlohmann::json& j) {
  McConfig cfg;
  try {
    if (j.contains("cells"))
      for (const auto& c : j.at("cells"))
        cfg.cells.push_back({c.at("K").get<int>(), c.at("T").get<int>()});
    if (j.contains("base")) cfg.base = dgp_config_from_json(j.at("base"));
    cfg.methods.clear();
    if (j.contains("methods"))
      for (const auto& m : j.at("methods")) cfg.methods.push_back(parse_estimator(m));
    if (j.contains("cov_specs"))
      for (const auto& s : j.at("cov_specs")) cfg.cov_specs.push_back(cov_spec_from_json(s));
    if (j.contains("instruments")) {
      const auto& g = j.at("instruments");
      if (g.contains("extended")) cfg.instruments.extended = g.at("extended").get<bool>();
      if (g.contains("donor_proxies_post"))
        cfg.instruments.donor_proxies_post = g.at("donor_proxies_post").get<bool>();
    }
    if (j.contains("reps")) cfg.reps = j.at("reps").get<int>();
    if (j.contains("level")) cfg.level = j.at("level").get<double>();
    if (j.contains("base_seed")) cfg.base_seed = j.at("base_seed").get<std::uint64_t>();
    if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("bad Monte Carlo config: ") + e.what());
  }
  if (cfg.methods.empty())
    cfg.methods = {EstimatorKind::Sc, EstimatorKind::ScS, EstimatorKind::Pi, EstimatorKind::PiP,
                   EstimatorKind::PiS};
  if (cfg.cov_specs.empty()) cfg.cov_specs = {CovSpec::robust()};
  return cfg;
}

inline ordered_json to_json(const DgpTruth& truth) {
  ordered_json j;
  j["alpha"] = std::vector<double>(truth.alpha.data(), truth.alpha.data() + truth.alpha.size());
  j["gamma"] = std::vector<double>(truth.gamma.data(), truth.gamma.data() + truth.gamma.size());
  j["tau"] = truth.tau;
  if (truth.psi) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index i = 0; i < truth.psi->rows(); ++i) {
      std::vector<double> row(truth.psi->cols());
      for (Eigen::Index k = 0; k < truth.psi->cols(); ++k) row[k] = (*truth.psi)(i, k);
      rows.push_back(row);
    }
    j["psi"] = rows;
  }
  return j;
}

inline ordered_json fit_to_json(const GmmFit& fit, double level = 0.95) {
  ordered_json j;
  const auto names = fit.theta.layout.names();
  ordered_json estimates;
  for (size_t i = 0; i < names.size(); ++i) {
    estimates[names[i]] = {{"estimate", fit.theta.values(static_cast<int>(i))},
                           {"se", fit.se(static_cast<int>(i))}};
  }
  j["estimates"] = estimates;
  j["tau"] = fit.tau_hat();
  j["tau_se"] = fit.tau_se();
  const auto ci = confidence_interval(fit, fit.theta.layout.tau_index(), level);
  j["tau_ci"] = {{"level", level}, {"lo", ci.first}, {"hi", ci.second}};
  j["J"] = fit.J;
  j["df"] = fit.df;
  if (fit.j_pvalue) j["j_pvalue"] = *fit.j_pvalue;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["grad_norm"] = fit.grad_norm;
  j["weighting"] = fit.weighting == WeightScheme::Tag::Identity ? "identity"
                   : fit.weighting == WeightScheme::Tag::TwoStep ? "twostep"
                                                                 : "fixed";
  j["cov_spec"] = fit.cov_spec.describe();
  j["diagnostics"] = {{"S_condition", fit.s_cond},
                      {"S_clipped", fit.s_clipped},
                      {"G_condition", fit.g_cond},
                      {"sample_size", fit.sample_size}};
  return j;
}

inline ordered_json report_to_json(const McReport& report) {
  ordered_json j;
  j["config"] = to_json(report.config);
  ordered_json rows = ordered_json::array();
  const auto& cfg = report.config;
  for (size_t s = 0; s < cfg.cov_specs.size(); ++s)
    for (size_t c = 0; c < cfg.cells.size(); ++c)
      for (size_t m = 0; m < cfg.methods.size(); ++m) {
        const McStats& st = report.stats[c][m][s];
        ordered_json row;
        row["cov_spec"] = cfg.cov_specs[s].describe();
        row["K"] = cfg.cells[c].K;
        row["T"] = cfg.cells[c].T;
        row["method"] = estimator_name(cfg.methods[m]);
        row["mse"] = st.mse;
        row["mse_mc_se"] = st.mse_mc_se;
        row["mse_trimmed"] = st.mse_trimmed;
        row["bias"] = st.bias;
        row["coverage"] = st.coverage;
        row["mean_se"] = st.mean_se;
        row["n_used"] = st.n_used;
        row["n_nonconverged"] = st.n_nonconverged;
        row["n_failed"] = st.n_failed;
        rows.push_back(row);
      }
  j["rows"] = rows;
  j["elapsed_seconds"] = report.elapsed_seconds;
  j["total_failures"] = report.total_failures;
  return j;
}

}  // namespace pcsc
