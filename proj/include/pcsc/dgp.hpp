#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>

#include "pcsc/panel.hpp"
#include "pcsc/rng.hpp"

namespace pcsc {

enum class FactorRegime { Stationary, LogTrend };
enum class ErrorKind { Iid, Ar1 };

struct ContaminationConfig {
  // Scale of the donor-factor loadings Theta of the contaminated surrogates;
  // Theta is built as Gamma * Psi for a fixed known Psi, so zero means no
  // contamination.
  double theta_loading_scale = 0.6;
};

// Simulation design: F donor factors drive 2F control units (first half =
// donors, second half = donor proxies) and K surrogate factors drive 2K
// surrogate series (first half = surrogates, second half = surrogate proxies).
// All loadings are 0/1 stacked identities, so the true weights are vectors of
// ones and the true ATT is 1.
struct DgpConfig {
  int F = 1;
  int K = 1;
  int T = 200;
  int T0 = 100;
  FactorRegime regime = FactorRegime::Stationary;
  ErrorKind errors = ErrorKind::Iid;
  double phi = 0.5;  // AR(1) coefficient when errors == Ar1
  bool with_covariates = false;
  std::uint64_t seed = 0;
  // Multiplies every idiosyncratic error draw; 0 gives the noiseless variant
  // used by exact-recovery tests.
  double noise_scale = 1.0;
  // Std. dev. of the surrogate factors around their means; 0 freezes the
  // per-period effect at exactly tau = 1, which together with noise_scale = 0
  // makes every moment vanish at the true parameters period by period.
  double effect_factor_sd = 1.0;
  std::optional<ContaminationConfig> contaminated;

  void validate() const {
    if (F < 1 || K < 1) throw Error(ErrorCode::BadConfig, "need F >= 1 and K >= 1");
    if (!(1 < T0 && T0 < T)) throw Error(ErrorCode::BadConfig, "need 1 < T0 < T");
    if (errors == ErrorKind::Ar1 && !(phi > -1.0 && phi < 1.0))
      throw Error(ErrorCode::BadPhi, "AR(1) coefficient must be in (-1,1)");
    if (noise_scale < 0.0 || effect_factor_sd < 0.0)
      throw Error(ErrorCode::BadConfig, "scales must be nonnegative");
  }
};

// Latent draws behind one simulated panel, exposed for diagnostics and tests.
struct DgpLatents {
  Eigen::MatrixXd lambda;      // T x F donor factors
  Eigen::MatrixXd rho;         // T x K surrogate factors
  Eigen::VectorXd mu;          // K surrogate factor means (1, 0, ..., 0)
  Eigen::VectorXd eps_outcome; // T
  Eigen::MatrixXd eps_controls;   // T x 2F
  Eigen::MatrixXd eps_surrogates; // T x 2K
  Eigen::VectorXd delta;       // T effect-equation error (used post only)
  Eigen::MatrixXd delta_x;     // T x K contaminated-surrogate effect error
};

struct DgpTruth {
  Eigen::VectorXd alpha;  // length F, all ones
  Eigen::VectorXd gamma;  // length K, all ones
  double tau = 1.0;
  std::optional<Eigen::MatrixXd> psi;  // F x K, contaminated designs only
};

// Known synthetic-control weights for the contaminated surrogates. Fixed,
// full pattern so every entry is identifiable in tests.
inline Eigen::MatrixXd contamination_psi(int n_donors, int n_surrogates, double scale) {
  Eigen::MatrixXd psi(n_donors, n_surrogates);
  for (int j = 0; j < n_surrogates; ++j)
    for (int i = 0; i < n_donors; ++i) psi(i, j) = scale * (0.6 + 0.4 * ((i + j) % 2));
  return psi;
}

// Stationary AR(1) with unit marginal variance: x_1 ~ N(0,1),
// x_t = phi x_{t-1} + sqrt(1-phi^2) e_t.
inline Eigen::VectorXd ar1_series(int T, double phi, CounterRng& rng) {
  if (!(phi > -1.0 && phi < 1.0))
    throw Error(ErrorCode::BadPhi, "AR(1) coefficient must be in (-1,1)");
  Eigen::VectorXd x(T);
  const double innov = std::sqrt(1.0 - phi * phi);
  x(0) = rng.next_normal();
  for (int t = 1; t < T; ++t) x(t) = phi * x(t - 1) + innov * rng.next_normal();
  return x;
}

namespace dgp_detail {

// Independent sub-streams per component so that toggling one piece of the
// design (noise scale, covariates, contamination) leaves the other draws
// untouched.
enum : std::uint64_t {
  kStreamLambda = 0x6c616d626461ull,
  kStreamRho = 0x72686full,
  kStreamEpsY = 0x6570735f79ull,
  kStreamEpsW = 0x6570735f77ull,
  kStreamEpsX = 0x6570735f78ull,
  kStreamDelta = 0x64656c7461ull,
  kStreamDeltaX = 0x64656c7478ull,
  kStreamCovY = 0x636f765f79ull,
  kStreamCovW = 0x636f765f77ull,
  kStreamCovX = 0x636f765f78ull,
};

inline CounterRng component_rng(const DgpConfig& cfg, std::uint64_t component) {
  return CounterRng(cfg.seed ^ (component * 0x9E3779B97F4A7C15ull));
}

inline Eigen::VectorXd error_series(const DgpConfig& cfg, CounterRng& rng) {
  Eigen::VectorXd e(cfg.T);
  if (cfg.errors == ErrorKind::Ar1) {
    e = ar1_series(cfg.T, cfg.phi, rng);
  } else {
    for (int t = 0; t < cfg.T; ++t) e(t) = rng.next_normal();
  }
  return cfg.noise_scale * e;
}

inline Eigen::MatrixXd error_matrix(const DgpConfig& cfg, int cols, CounterRng& rng) {
  Eigen::MatrixXd e(cfg.T, cols);
  for (int c = 0; c < cols; ++c) e.col(c) = error_series(cfg, rng);
  return e;
}

inline Eigen::MatrixXd normal_matrix(int rows, int cols, CounterRng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = rng.next_normal();
  return m;
}

}  // namespace dgp_detail

// Simulates one panel. The factor loadings map control unit i to donor factor
// i mod F and surrogate series j to factor j mod K, which makes the first
// halves donors/surrogates and the second halves their proxies.
inline Panel simulate_dgp_full(const DgpConfig& cfg, DgpTruth* truth_out = nullptr,
                               DgpLatents* latents_out = nullptr) {
  using namespace dgp_detail;
  cfg.validate();
  const int T = cfg.T;
  const int F = cfg.F;
  const int K = cfg.K;

  DgpLatents lat;
  {
    auto rng = component_rng(cfg, kStreamLambda);
    lat.lambda = normal_matrix(T, F, rng);
    for (int t = 0; t < T; ++t) {
      const double mean = cfg.regime == FactorRegime::Stationary ? 1.0 : std::log(t + 1.0);
      lat.lambda.row(t).array() += mean;
    }
  }
  {
    auto rng = component_rng(cfg, kStreamRho);
    lat.mu = Eigen::VectorXd::Zero(K);
    lat.mu(0) = 1.0;
    lat.rho = cfg.effect_factor_sd * normal_matrix(T, K, rng);
    lat.rho.rowwise() += lat.mu.transpose();
  }
  {
    auto rng = component_rng(cfg, kStreamEpsY);
    lat.eps_outcome = error_series(cfg, rng);
  }
  {
    auto rng = component_rng(cfg, kStreamEpsW);
    lat.eps_controls = error_matrix(cfg, 2 * F, rng);
  }
  {
    auto rng = component_rng(cfg, kStreamEpsX);
    lat.eps_surrogates = error_matrix(cfg, 2 * K, rng);
  }
  {
    auto rng = component_rng(cfg, kStreamDelta);
    lat.delta = error_series(cfg, rng);
  }
  lat.delta_x.resize(0, 0);

  Eigen::MatrixXd cov_y, cov_ctrl, cov_surr;
  if (cfg.with_covariates) {
    auto ry = component_rng(cfg, kStreamCovY);
    cov_y = normal_matrix(T, 1, ry);
    auto rw = component_rng(cfg, kStreamCovW);
    cov_ctrl = normal_matrix(T, 2 * F, rw);
    auto rx = component_rng(cfg, kStreamCovX);
    cov_surr = normal_matrix(T, 2 * K, rx);
  }

  // Control units: W_{i,t} = lambda_{t, i mod F} + C_{W,i,t} + eps.
  Eigen::MatrixXd controls(T, 2 * F);
  for (int i = 0; i < 2 * F; ++i) {
    controls.col(i) = lat.lambda.col(i % F) + lat.eps_controls.col(i);
    if (cfg.with_covariates) controls.col(i) += cov_ctrl.col(i);
  }

  // Surrogate series: X_{j,t} = rho_{t, j mod K} + C_{X,j,t} + eps, except that
  // contaminated observed surrogates load on lambda'Theta and carry the effect
  // factors only post-treatment.
  Eigen::MatrixXd surrogate_series(T, 2 * K);
  Eigen::MatrixXd psi_true;
  if (cfg.contaminated) {
    psi_true = contamination_psi(F, K, cfg.contaminated->theta_loading_scale);
    const Eigen::MatrixXd theta_loadings = psi_true;  // Gamma for the donor half is I_F
    auto rng = component_rng(cfg, kStreamDeltaX);
    lat.delta_x = error_matrix(cfg, K, rng);
    for (int j = 0; j < K; ++j) {
      surrogate_series.col(j) = lat.lambda * theta_loadings.col(j) + lat.eps_surrogates.col(j);
      if (cfg.with_covariates) surrogate_series.col(j) += cov_surr.col(j);
      for (int t = cfg.T0; t < T; ++t)
        surrogate_series(t, j) += lat.rho(t, j) + lat.delta_x(t, j);
    }
  } else {
    for (int j = 0; j < K; ++j) {
      surrogate_series.col(j) = lat.rho.col(j) + lat.eps_surrogates.col(j);
      if (cfg.with_covariates) surrogate_series.col(j) += cov_surr.col(j);
    }
  }
  for (int j = K; j < 2 * K; ++j) {
    surrogate_series.col(j) = lat.rho.col(j % K) + lat.eps_surrogates.col(j);
    if (cfg.with_covariates) surrogate_series.col(j) += cov_surr.col(j);
  }

  Eigen::VectorXd y = lat.lambda.rowwise().sum() + lat.eps_outcome;
  if (cfg.with_covariates) y += cov_y.col(0);
  for (int t = cfg.T0; t < T; ++t) y(t) += lat.rho.row(t).sum() + lat.delta(t);

  Panel panel;
  panel.t0 = cfg.T0;
  panel.outcome = y;
  panel.donors = controls.leftCols(F);
  panel.donor_proxies = controls.rightCols(F);
  panel.surrogates = surrogate_series.leftCols(K);
  panel.surrogate_proxies = surrogate_series.rightCols(K);
  if (cfg.with_covariates) {
    panel.cov_outcome = cov_y;
    for (int i = 0; i < F; ++i) panel.cov_donors.push_back(cov_ctrl.col(i));
    for (int j = 0; j < K; ++j) panel.cov_surrogates.push_back(cov_surr.col(j));
  } else {
    panel.cov_outcome.resize(T, 0);
  }
  panel.validate();

  if (truth_out) {
    truth_out->alpha = Eigen::VectorXd::Ones(F);
    truth_out->gamma = Eigen::VectorXd::Ones(K);
    truth_out->tau = 1.0;
    truth_out->psi = cfg.contaminated ? std::optional<Eigen::MatrixXd>(psi_true) : std::nullopt;
  }
  if (latents_out) *latents_out = std::move(lat);
  return panel;
}

inline Panel simulate_dgp(const DgpConfig& cfg) {
  if (cfg.contaminated)
    throw Error(ErrorCode::BadConfig, "use simulate_contaminated for contaminated designs");
  return simulate_dgp_full(cfg);
}

inline std::pair<Panel, Eigen::MatrixXd> simulate_contaminated(const DgpConfig& cfg) {
  if (!cfg.contaminated)
    throw Error(ErrorCode::BadConfig, "config has no contamination settings");
  DgpTruth truth;
  Panel panel = simulate_dgp_full(cfg, &truth);
  return {std::move(panel), *truth.psi};
}

}  // namespace pcsc
