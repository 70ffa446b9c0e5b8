#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "pcsc/moment_systems.hpp"
#include "pcsc/panel.hpp"
#include "pcsc/stats.hpp"

namespace pcsc {

struct WeightScheme {
  enum class Tag { Identity, TwoStep, Fixed };
  Tag tag = Tag::Identity;
  Eigen::MatrixXd fixed;

  static WeightScheme identity() { return {Tag::Identity, {}}; }
  static WeightScheme two_step() { return {Tag::TwoStep, {}}; }
  static WeightScheme fixed_matrix(Eigen::MatrixXd m) { return {Tag::Fixed, std::move(m)}; }
};

// Identity when the system is exactly identified (weighting is then
// irrelevant), efficient two-step otherwise.
inline WeightScheme default_weights(const MomentSystem& sys) {
  return sys.df() == 0 ? WeightScheme::identity() : WeightScheme::two_step();
}

struct CovSpec {
  enum class Tag { Robust, Hac };
  Tag tag = Tag::Robust;
  int bandwidth = -1;  // -1 = automatic Newey-West rule, Bartlett kernel

  static CovSpec robust() { return {Tag::Robust, 0}; }
  static CovSpec hac(int b = -1) { return {Tag::Hac, b}; }
  std::string describe() const {
    if (tag == Tag::Robust) return "robust";
    return bandwidth < 0 ? "hac(auto)" : "hac(" + std::to_string(bandwidth) + ")";
  }
};

inline int newey_west_bandwidth(int T) {
  return static_cast<int>(std::floor(4.0 * std::pow(T / 100.0, 2.0 / 9.0)));
}

struct GmmOptions {
  bool center_s = true;        // center moments at their sample mean inside S-hat
  int max_iterations = 200;
  double gradient_tol = 1e-10;
  int max_step_halvings = 30;
  double condition_limit = 1e10;
};

struct GmmFit {
  ParamVector theta;
  Eigen::MatrixXd vcov;   // p x p, already divided by T
  Eigen::VectorXd se;
  Eigen::MatrixXd S_hat;  // q x q long-run moment covariance
  Eigen::MatrixXd G_hat;  // q x p mean Jacobian at theta_hat
  Eigen::MatrixXd omega;  // weight matrix actually used
  Eigen::VectorXd m_hat;  // sample moments at theta_hat
  double J = 0.0;
  int df = 0;
  std::optional<double> j_pvalue;
  bool converged = true;
  int iterations = 0;
  double grad_norm = 0.0;
  WeightScheme::Tag weighting = WeightScheme::Tag::Identity;
  CovSpec cov_spec;
  bool s_clipped = false;   // S-hat had negative eigenvalues clipped to zero
  double s_cond = 0.0;      // eigenvalue ratio of S-hat
  double g_cond = 0.0;      // singular-value ratio of G-hat
  int sample_size = 0;

  double tau_hat() const { return theta.tau(); }
  double tau_se() const { return se(theta.layout.tau_index()); }
};

namespace gmm_detail {

// Sample moments m(theta) and mean Jacobian G(theta) in one pass over periods.
inline void accumulate(const MomentSystem& sys, const Panel& panel, const Eigen::VectorXd& theta,
                       Eigen::VectorXd& m, Eigen::MatrixXd* G) {
  const int T = panel.periods();
  m = Eigen::VectorXd::Zero(sys.q());
  if (G) *G = Eigen::MatrixXd::Zero(sys.q(), sys.p());
  for (int t = 0; t < T; ++t) {
    m += sys.eval(panel, t, theta);
    if (G) *G += sys.jac(panel, t, theta);
  }
  m /= T;
  if (G) *G /= T;
}

inline Eigen::VectorXd sample_moments(const MomentSystem& sys, const Panel& panel,
                                      const Eigen::VectorXd& theta) {
  Eigen::VectorXd m;
  accumulate(sys, panel, theta, m, nullptr);
  return m;
}

// Square root factor L with omega = L L'; eigendecomposition handles PSD
// matrices that Cholesky would reject.
inline Eigen::MatrixXd weight_sqrt(const Eigen::MatrixXd& omega) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega);
  if (es.info() != Eigen::Success)
    throw Error(ErrorCode::NonPsdWeight, "eigendecomposition of weight matrix failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double emax = ev.cwiseAbs().maxCoeff();
  Eigen::VectorXd root = ev;
  for (int i = 0; i < root.size(); ++i) {
    if (ev(i) < -1e-10 * std::max(1.0, emax))
      throw Error(ErrorCode::NonPsdWeight, "weight matrix has negative eigenvalue");
    root(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

inline void check_symmetric_weight(const Eigen::MatrixXd& omega) {
  const double scale = std::max(1.0, omega.cwiseAbs().maxCoeff());
  if ((omega - omega.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw Error(ErrorCode::NonPsdWeight, "weight matrix is not symmetric");
}

// Pseudo-inverse of a symmetric PSD matrix; eigenvalues below rel_tol * max
// are dropped.
inline Eigen::MatrixXd psd_inverse(const Eigen::MatrixXd& s, double rel_tol = 1e-12,
                                   bool* dropped = nullptr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double emax = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  if (dropped) *dropped = false;
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) > rel_tol * emax)
      inv(i) = 1.0 / ev(i);
    else if (dropped)
      *dropped = true;
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

inline double qr_condition(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr, int p) {
  const auto& R = qr.matrixR();
  double dmax = 0.0, dmin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < p; ++i) {
    const double d = std::abs(R(i, i));
    dmax = std::max(dmax, d);
    dmin = std::min(dmin, d);
  }
  if (dmin == 0.0) return std::numeric_limits<double>::infinity();
  return dmax / dmin;
}

}  // namespace gmm_detail

// T x q matrix whose row t holds U_t(theta)'.
inline Eigen::MatrixXd moment_matrix(const MomentSystem& sys, const Panel& panel,
                                     const Eigen::VectorXd& theta) {
  const int T = panel.periods();
  Eigen::MatrixXd U(T, sys.q());
  for (int t = 0; t < T; ++t) U.row(t) = sys.eval(panel, t, theta).transpose();
  return U;
}

// Long-run covariance of a moment series (rows of U). Robust is the zero-lag
// outer-product estimate; HAC adds Bartlett-weighted autocovariances, so
// bandwidth 0 reproduces Robust exactly. The result is symmetrized and, if
// needed, projected to PSD by clipping negative eigenvalues (flagged, not
// fatal).
inline Eigen::MatrixXd estimate_S_from(const Eigen::MatrixXd& U, const CovSpec& cov,
                                       bool center = true, bool* clipped = nullptr) {
  const int T = static_cast<int>(U.rows());
  int b = 0;
  if (cov.tag == CovSpec::Tag::Hac) b = cov.bandwidth < 0 ? newey_west_bandwidth(T) : cov.bandwidth;
  if (b >= T) throw Error(ErrorCode::BadConfig, "HAC bandwidth must be < T");

  Eigen::MatrixXd Uc = U;
  if (center) Uc.rowwise() -= U.colwise().mean();

  Eigen::MatrixXd S = (Uc.transpose() * Uc) / T;
  for (int j = 1; j <= b; ++j) {
    const double w = 1.0 - static_cast<double>(j) / (b + 1);
    Eigen::MatrixXd gamma_j =
        (Uc.bottomRows(T - j).transpose() * Uc.topRows(T - j)) / T;  // E[u_t u_{t-j}']
    S += w * (gamma_j + gamma_j.transpose());
  }
  S = 0.5 * (S + S.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  const Eigen::VectorXd& ev = es.eigenvalues();
  if (clipped) *clipped = false;
  if (ev.minCoeff() < 0.0) {
    if (clipped) *clipped = true;
    Eigen::VectorXd fixed = ev.cwiseMax(0.0);
    S = es.eigenvectors() * fixed.asDiagonal() * es.eigenvectors().transpose();
    S = 0.5 * (S + S.transpose()).eval();
  }
  return S;
}

inline Eigen::MatrixXd estimate_S(const MomentSystem& sys, const Panel& panel,
                                  const Eigen::VectorXd& theta, const CovSpec& cov,
                                  bool center = true, bool* clipped = nullptr) {
  return estimate_S_from(moment_matrix(sys, panel, theta), cov, center, clipped);
}

// (G'WG)^-1 G'W S W'G (G'W'G)^-1 / T. W = omega. Collapses to (G'S^-1G)^-1/T
// under efficient weighting.
inline Eigen::MatrixXd sandwich(const Eigen::MatrixXd& G, const Eigen::MatrixXd& S,
                                const Eigen::MatrixXd& omega, int T,
                                double condition_limit = 1e10) {
  const int p = static_cast<int>(G.cols());
  const Eigen::MatrixXd bread_inv = G.transpose() * omega * G;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(bread_inv);
  const double cond = gmm_detail::qr_condition(qr, p);
  if (!(cond < condition_limit))
    throw Error(ErrorCode::SingularSystem,
                "G'WG condition number " + std::to_string(cond) + " exceeds limit");
  const Eigen::MatrixXd bread = qr.solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd meat = G.transpose() * omega * S * omega.transpose() * G;
  Eigen::MatrixXd v = bread * meat * bread.transpose() / T;
  return 0.5 * (v + v.transpose());
}

namespace gmm_detail {

// Mean of a residual template over a row range at a given parameter point.
inline double window_mean(const ResidualSpec& resid, const Panel& panel, const RowRange& rows,
                          const Eigen::VectorXd& theta) {
  double acc = 0.0;
  for (int t = rows.lo; t < rows.hi; ++t) acc += resid.value(panel, t, theta);
  return acc / std::max(1, rows.length());
}

inline double window_rms(const ResidualSpec& resid, const Panel& panel, const RowRange& rows,
                         const Eigen::VectorXd& theta) {
  double acc = 0.0;
  for (int t = rows.lo; t < rows.hi; ++t) {
    const double v = resid.value(panel, t, theta);
    acc += v * v;
  }
  return std::sqrt(acc / std::max(1, rows.length()));
}

// Least-squares fit of instruments-times-residual moment rows that are linear
// in the requested coefficients; used by the staged initializers.
//   rows: sum_t z_t (y_t - x_t' beta) = 0  ->  (sum z x') beta = sum z y
inline Eigen::VectorXd linear_moment_fit(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& X,
                                         const Eigen::VectorXd& y) {
  const Eigen::MatrixXd A = Z.transpose() * X;  // d x k
  const Eigen::VectorXd c = Z.transpose() * y;  // d
  return A.colPivHouseholderQr().solve(c);
}

inline Eigen::VectorXd initial_point(const MomentSystem& sys, const Panel& panel);

}  // namespace gmm_detail

// Minimizes m(theta)' Omega m(theta) over the sample moments of `sys`.
// Affine systems are solved exactly in a single Gauss-Newton step (the step
// from any starting point is the closed-form linear-GMM solution); bilinear
// systems iterate damped Gauss-Newton from a staged initialization. Two-step
// weighting runs an identity-weighted first stage and re-solves with the
// inverse of its robust S-hat.
inline GmmFit solve(const MomentSystem& sys, const Panel& panel,
                    WeightScheme weights = WeightScheme::identity(),
                    CovSpec cov = CovSpec::robust(),
                    std::optional<Eigen::VectorXd> init = std::nullopt,
                    const GmmOptions& opts = {}) {
  using namespace gmm_detail;
  const int T = panel.periods();
  const int q = sys.q();
  const int p = sys.p();
  if (q < p)
    throw Error(ErrorCode::UnderIdentified,
                "system has " + std::to_string(q) + " moments for " + std::to_string(p) +
                    " parameters");

  if (weights.tag == WeightScheme::Tag::TwoStep) {
    GmmFit stage1 = solve(sys, panel, WeightScheme::identity(), cov, init, opts);
    const Eigen::MatrixXd S1 =
        estimate_S(sys, panel, stage1.theta.values, CovSpec::robust(), opts.center_s);
    // Numerically zero moment variance (exact-fit data): every weighting is
    // equivalent, and inverting S would only amplify rounding noise.
    const double s_max = S1.cwiseAbs().maxCoeff();
    if (s_max <= 1e-18 * std::max(1.0, stage1.G_hat.squaredNorm())) {
      stage1.weighting = WeightScheme::Tag::TwoStep;
      if (stage1.df > 0) stage1.j_pvalue = stats::chi2_sf(stage1.J, stage1.df);
      return stage1;
    }
    Eigen::MatrixXd omega2 = psd_inverse(S1);
    GmmFit fit = solve(sys, panel, WeightScheme::fixed_matrix(std::move(omega2)), cov,
                       stage1.theta.values, opts);
    fit.weighting = WeightScheme::Tag::TwoStep;
    if (fit.df > 0) fit.j_pvalue = stats::chi2_sf(fit.J, fit.df);
    return fit;
  }

  Eigen::MatrixXd omega;
  if (weights.tag == WeightScheme::Tag::Identity) {
    omega = Eigen::MatrixXd::Identity(q, q);
  } else {
    omega = weights.fixed;
    if (omega.rows() != q || omega.cols() != q)
      throw Error(ErrorCode::NonPsdWeight, "fixed weight matrix has wrong dimensions");
    check_symmetric_weight(omega);
  }
  const Eigen::MatrixXd L = weight_sqrt(omega);  // omega = L L'

  Eigen::VectorXd theta = init ? *init : initial_point(sys, panel);
  if (theta.size() != p) throw Error(ErrorCode::BadConfig, "init has wrong length");

  // The lift parameter multiplies the window mean of W'a; if that mean is
  // near zero the column of the Jacobian vanishes and the parameter is
  // unidentified. Checked here and again at the solution.
  auto check_lift_baseline = [&](const Eigen::VectorXd& at) {
    for (const auto& lr : sys.lift_rows) {
      if (!sys.baseline_template) break;
      const double mean = window_mean(*sys.baseline_template, panel, lr.range, at);
      const double rms = window_rms(*sys.baseline_template, panel, lr.range, at);
      if (std::abs(mean) < 1e-8 * std::max(1.0, rms))
        throw Error(ErrorCode::DegenerateBaseline,
                    "synthetic-control mean over lift window is near zero");
    }
  };
  check_lift_baseline(theta);

  Eigen::VectorXd m;
  Eigen::MatrixXd G;
  accumulate(sys, panel, theta, m, &G);
  if (!m.allFinite()) throw Error(ErrorCode::NoConvergence, "non-finite sample moments");

  double objective = (L.transpose() * m).squaredNorm();
  double grad_norm = (G.transpose() * (omega * m)).norm();
  int iter = 0;
  bool converged = grad_norm < opts.gradient_tol;
  double cond = 0.0;

  while (!converged && iter < opts.max_iterations) {
    ++iter;
    const Eigen::MatrixXd A = L.transpose() * G;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    cond = qr_condition(qr, p);
    if (!(cond < opts.condition_limit))
      throw Error(ErrorCode::SingularSystem,
                  "moment Jacobian condition number " + std::to_string(cond) +
                      " exceeds limit " + std::to_string(opts.condition_limit));
    const Eigen::VectorXd step = qr.solve(-(L.transpose() * m));

    // Damped update: halve until the objective stops increasing.
    double scale = 1.0;
    Eigen::VectorXd theta_new;
    Eigen::VectorXd m_new;
    double obj_new = objective;
    bool accepted = false;
    for (int h = 0; h <= opts.max_step_halvings; ++h) {
      theta_new = theta + scale * step;
      m_new = sample_moments(sys, panel, theta_new);
      if (m_new.allFinite()) {
        obj_new = (L.transpose() * m_new).squaredNorm();
        if (obj_new <= objective * (1.0 + 1e-14) + 1e-300) {
          accepted = true;
          break;
        }
      }
      scale *= 0.5;
    }
    if (!accepted) break;  // at the numerical floor

    theta = theta_new;
    accumulate(sys, panel, theta, m, &G);
    objective = (L.transpose() * m).squaredNorm();
    grad_norm = (G.transpose() * (omega * m)).norm();
    const double grad_scale =
        std::max(1.0, (L.transpose() * G).norm() * std::sqrt(std::max(objective, 0.0)));
    if (grad_norm < opts.gradient_tol || grad_norm < 1e-12 * grad_scale) {
      converged = true;
      break;
    }
    if (sys.affine()) break;  // one exact step suffices
  }
  if (sys.affine()) {
    // the single Gauss-Newton step is the exact linear-GMM solution
    converged = true;
  }
  if (!theta.allFinite()) throw Error(ErrorCode::NoConvergence, "parameters diverged");

  check_lift_baseline(theta);

  GmmFit fit;
  fit.theta = ParamVector(sys.layout, theta);
  fit.m_hat = m;
  fit.G_hat = G;
  fit.omega = omega;
  fit.J = T * (m.dot(omega * m));
  fit.df = sys.df();
  fit.converged = converged;
  fit.iterations = iter;
  fit.grad_norm = grad_norm;
  fit.weighting = weights.tag;
  fit.cov_spec = cov;
  fit.sample_size = T;

  fit.S_hat = estimate_S(sys, panel, theta, cov, opts.center_s, &fit.s_clipped);
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.S_hat);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    fit.s_cond = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
  }
  {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(G);
    const double lo = svd.singularValues().minCoeff();
    fit.g_cond = lo > 0 ? svd.singularValues().maxCoeff() / lo
                        : std::numeric_limits<double>::infinity();
  }
  fit.vcov = sandwich(G, fit.S_hat, omega, T, opts.condition_limit);
  fit.se = fit.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return fit;
}

struct JTestResult {
  double J = 0.0;
  int df = 0;
  double pvalue = 1.0;
};

// Hansen overidentification test; requires efficient weighting.
inline JTestResult j_test(const GmmFit& fit) {
  if (fit.df < 1)
    throw Error(ErrorCode::NotOveridentified, "J-test needs df >= 1, system has df = 0");
  if (fit.weighting != WeightScheme::Tag::TwoStep)
    throw Error(ErrorCode::InvalidWeighting, "J-test requires two-step (efficient) weighting");
  return {fit.J, fit.df, stats::chi2_sf(fit.J, fit.df)};
}

// theta_i +/- z_{(1+level)/2} * se_i
inline std::pair<double, double> confidence_interval(const GmmFit& fit, int index, double level) {
  if (!(level > 0.0 && level < 1.0))
    throw Error(ErrorCode::BadConfig, "confidence level must be in (0,1)");
  const double z = stats::normal_quantile(0.5 * (1.0 + level));
  const double c = fit.theta.values(index);
  const double h = z * fit.se(index);
  return {c - h, c + h};
}

namespace gmm_detail {

// Staged starting points for the bilinear systems; affine systems start at
// zero because the first Gauss-Newton step is exact from anywhere.
inline Eigen::VectorXd initial_point(const MomentSystem& sys, const Panel& panel) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(sys.p());

  if (sys.kind == EstimatorKind::PiSCov) {
    // Stage one: ignore covariates and fit the plain surrogate system.
    const MomentSystem plain = build_pi_s(panel);
    const GmmFit fit0 = solve(plain, panel, WeightScheme::identity(), CovSpec::robust());
    for (int i = 0; i < sys.layout.n_alpha; ++i)
      theta(sys.layout.alpha_index(i)) = fit0.theta.values(plain.layout.alpha_index(i));
    for (int j = 0; j < sys.layout.n_gamma; ++j)
      theta(sys.layout.gamma_index(j)) = fit0.theta.values(plain.layout.gamma_index(j));
    theta(sys.layout.tau_index()) = fit0.theta.values(plain.layout.tau_index());
  } else if (sys.kind == EstimatorKind::PiSContam) {
    const int T0 = panel.t0;
    const int T = panel.periods();
    const auto Z0 = panel.donor_proxies.topRows(T0);
    const auto W_pre = panel.donors.topRows(T0);
    // Psi column-by-column, then alpha, from pre-period rows.
    for (int j = 0; j < sys.layout.psi_cols; ++j) {
      const Eigen::VectorXd psi_j =
          linear_moment_fit(Z0, W_pre, panel.surrogates.topRows(T0).col(j));
      for (int i = 0; i < sys.layout.psi_rows; ++i) theta(sys.layout.psi_index(i, j)) = psi_j(i);
    }
    const Eigen::VectorXd alpha = linear_moment_fit(Z0, W_pre, panel.outcome.head(T0));
    for (int i = 0; i < sys.layout.n_alpha; ++i) theta(sys.layout.alpha_index(i)) = alpha(i);
    // Post-period linear stage for (gamma, tau) given alpha-hat and Psi-hat:
    // rows Z1 (Y - W'a - (X - Psi'W)'g), (Y - tau - W'a), ((X - Psi'W)'g - tau).
    const int n_post = T - T0;
    const int h = sys.layout.n_gamma;
    const Eigen::MatrixXd W_post = panel.donors.bottomRows(n_post);
    Eigen::MatrixXd cleaned = panel.surrogates.bottomRows(n_post);
    Eigen::MatrixXd psi(sys.layout.psi_rows, sys.layout.psi_cols);
    for (int j = 0; j < sys.layout.psi_cols; ++j)
      for (int i = 0; i < sys.layout.psi_rows; ++i) psi(i, j) = theta(sys.layout.psi_index(i, j));
    cleaned -= W_post * psi;
    const Eigen::VectorXd gap = panel.outcome.tail(n_post) - W_post * alpha;
    const int d1 = panel.n_surrogate_proxies();
    Eigen::MatrixXd Z(n_post, d1 + 2);
    Z.leftCols(d1) = panel.surrogate_proxies.bottomRows(n_post);
    Z.col(d1).setOnes();
    Z.col(d1 + 1).setOnes();
    Eigen::MatrixXd X(n_post, h + 1);
    Eigen::VectorXd y(n_post);
    // Stack the three row groups as one regression in (gamma, tau):
    //   Z1 rows:  gap = cleaned' g            (tau coef 0)
    //   Y row:    gap = tau
    //   X row:    0   = cleaned' g - tau
    // Solve jointly by least squares on the stacked moment equations.
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d1 + 2, h + 1);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(d1 + 2);
    A.block(0, 0, d1, h) =
        panel.surrogate_proxies.bottomRows(n_post).transpose() * cleaned;
    c.head(d1) = panel.surrogate_proxies.bottomRows(n_post).transpose() * gap;
    A(d1, h) = n_post;
    c(d1) = gap.sum();
    A.row(d1 + 1).head(h) = cleaned.colwise().sum();
    A(d1 + 1, h) = -n_post;
    const Eigen::VectorXd gt = A.colPivHouseholderQr().solve(c);
    for (int j = 0; j < h; ++j) theta(sys.layout.gamma_index(j)) = gt(j);
    theta(sys.layout.tau_index()) = gt(h);
  }

  // Systems with appended window/lift rows need the base coefficients set
  // before the extras: the lift column of the Jacobian is -W'a over the
  // window, which is identically zero at a = 0. For affine base kinds, one
  // restricted linear-GMM step over the non-extra rows and columns lands on
  // the exact base solution.
  const int n_extras = static_cast<int>(sys.layout.extras.size());
  const bool bilinear_base =
      sys.kind == EstimatorKind::PiSCov || sys.kind == EstimatorKind::PiSContam;
  if (n_extras > 0 && !bilinear_base) {
    const int p_base = sys.p() - n_extras;
    Eigen::VectorXd m;
    Eigen::MatrixXd G;
    accumulate(sys, panel, theta, m, &G);
    std::vector<int> base_rows;
    int off = 0;
    for (const auto& b : sys.blocks) {
      const int d = static_cast<int>(b.instruments.size());
      bool owns_extra = false;
      for (const auto& l : b.residual.linear) owns_extra = owns_extra || l.param >= p_base;
      for (const auto& bl : b.residual.bilinear)
        owns_extra = owns_extra || bl.param_a >= p_base || bl.param_b >= p_base;
      if (!owns_extra)
        for (int k = 0; k < d; ++k) base_rows.push_back(off + k);
      off += d;
    }
    Eigen::MatrixXd Gb(base_rows.size(), p_base);
    Eigen::VectorXd mb(base_rows.size());
    for (size_t r = 0; r < base_rows.size(); ++r) {
      Gb.row(r) = G.row(base_rows[r]).head(p_base);
      mb(r) = m(base_rows[r]);
    }
    theta.head(p_base) += Gb.colPivHouseholderQr().solve(-mb);
  }

  // Window and lift extras start at their exactly-identified values given the
  // rest of the starting point.
  for (size_t k = 0; k < sys.layout.extras.size(); ++k) {
    const int idx = sys.layout.extra_index(static_cast<int>(k));
    for (const auto& b : sys.blocks) {
      bool owns = false;
      for (const auto& l : b.residual.linear) owns = owns || l.param == idx;
      for (const auto& bl : b.residual.bilinear)
        owns = owns || bl.param_a == idx || bl.param_b == idx;
      if (!owns) continue;
      const double effect = window_mean(sys.effect_template, panel, b.range, theta);
      bool is_lift = false;
      for (const auto& lr : sys.lift_rows) is_lift = is_lift || lr.param == idx;
      if (is_lift && sys.baseline_template) {
        const double base = window_mean(*sys.baseline_template, panel, b.range, theta);
        theta(idx) = std::abs(base) > 1e-12 ? effect / base : 0.0;
      } else {
        theta(idx) = effect;
      }
      break;
    }
  }
  return theta;
}

}  // namespace gmm_detail

}  // namespace pcsc
