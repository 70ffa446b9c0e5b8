#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "pcsc/panel.hpp"
#include "pcsc/params.hpp"

namespace pcsc {

enum class EstimatorKind { Sc, ScS, Pi, PiP, PiS, PiSCov, PiSContam };

inline const char* estimator_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Sc: return "sc";
    case EstimatorKind::ScS: return "sc-s";
    case EstimatorKind::Pi: return "pi";
    case EstimatorKind::PiP: return "pi-p";
    case EstimatorKind::PiS: return "pi-s";
    case EstimatorKind::PiSCov: return "pi-s-cov";
    case EstimatorKind::PiSContam: return "pi-s-contam";
  }
  return "?";
}

inline EstimatorKind parse_estimator(const std::string& s) {
  if (s == "sc") return EstimatorKind::Sc;
  if (s == "sc-s") return EstimatorKind::ScS;
  if (s == "pi") return EstimatorKind::Pi;
  if (s == "pi-p") return EstimatorKind::PiP;
  if (s == "pi-s") return EstimatorKind::PiS;
  if (s == "pi-s-cov") return EstimatorKind::PiSCov;
  if (s == "pi-s-contam") return EstimatorKind::PiSContam;
  throw Error(ErrorCode::BadConfig, "unknown estimator '" + s + "'");
}

// Scalar observable at one period. `unit` selects a column, `comp` a covariate
// component. Squared-proxy kinds exist for overidentifying instruments.
struct DataRef {
  enum class Kind {
    One,
    TreatInd,          // 1{t > T0}
    Outcome,           // Y_t
    Donor,             // W_{unit,t}
    Surrogate,         // X_{unit,t}
    SurrogatePost,     // X_{unit,t} * 1{t > T0}
    DonorProxy,        // Z0_{unit,t}
    SurrogateProxy,    // Z1_{unit,t}
    DonorProxySq,      // Z0_{unit,t}^2
    SurrogateProxySq,  // Z1_{unit,t}^2
    CovOutcome,        // C_{Y,t,comp}
    CovDonor,          // C_{W,unit,t,comp}
    CovSurrogate,      // C_{X,unit,t,comp}
  };
  Kind kind = Kind::One;
  int unit = 0;
  int comp = 0;

  double value(const Panel& p, int row) const {
    switch (kind) {
      case Kind::One: return 1.0;
      case Kind::TreatInd: return p.is_post(row) ? 1.0 : 0.0;
      case Kind::Outcome: return p.outcome(row);
      case Kind::Donor: return p.donors(row, unit);
      case Kind::Surrogate: return p.surrogates(row, unit);
      case Kind::SurrogatePost: return p.is_post(row) ? p.surrogates(row, unit) : 0.0;
      case Kind::DonorProxy: return p.donor_proxies(row, unit);
      case Kind::SurrogateProxy: return p.surrogate_proxies(row, unit);
      case Kind::DonorProxySq: {
        const double z = p.donor_proxies(row, unit);
        return z * z;
      }
      case Kind::SurrogateProxySq: {
        const double z = p.surrogate_proxies(row, unit);
        return z * z;
      }
      case Kind::CovOutcome: return p.cov_outcome(row, comp);
      case Kind::CovDonor: return p.cov_donors[unit](row, comp);
      case Kind::CovSurrogate: return p.cov_surrogates[unit](row, comp);
    }
    return 0.0;
  }
};

// Residual of one moment block, as data-weighted terms that are constant,
// linear, or bilinear in the parameter vector. Everything downstream (exact
// linear solves, analytic Jacobians, affineness detection) reads off this
// structure.
struct ResidualSpec {
  struct ConstTerm {
    DataRef src;
    double coef;
  };
  struct LinTerm {
    int param;
    DataRef src;
    double coef;
  };
  struct BilTerm {
    int param_a, param_b;
    DataRef src;
    double coef;
  };
  std::vector<ConstTerm> constant;
  std::vector<LinTerm> linear;
  std::vector<BilTerm> bilinear;

  double value(const Panel& p, int row, const Eigen::VectorXd& theta) const {
    double r = 0.0;
    for (const auto& c : constant) r += c.coef * c.src.value(p, row);
    for (const auto& l : linear) r += l.coef * l.src.value(p, row) * theta(l.param);
    for (const auto& b : bilinear)
      r += b.coef * b.src.value(p, row) * theta(b.param_a) * theta(b.param_b);
    return r;
  }

  // Adds d(residual)/d(theta) into g (length p).
  void accumulate_gradient(const Panel& p, int row, const Eigen::VectorXd& theta,
                           Eigen::VectorXd& g) const {
    for (const auto& l : linear) g(l.param) += l.coef * l.src.value(p, row);
    for (const auto& b : bilinear) {
      const double v = b.coef * b.src.value(p, row);
      g(b.param_a) += v * theta(b.param_b);
      g(b.param_b) += v * theta(b.param_a);
    }
  }
};

// Half-open 0-based row range.
struct RowRange {
  int lo = 0;
  int hi = 0;
  bool contains(int row) const { return row >= lo && row < hi; }
  int length() const { return hi - lo; }
};

struct MomentBlock {
  RowRange range;
  std::vector<DataRef> instruments;
  ResidualSpec residual;
  std::string label;
};

// Instrument options for the surrogate proximal system. `extended` appends a
// constant and elementwise squared proxies to g0 and g1 (overidentifying,
// enables the J-test); `donor_proxies_post` also feeds Z0 into g1.
struct InstrumentChoice {
  bool extended = false;
  bool donor_proxies_post = false;
};

// Per-period moment vector U_t(theta) and its analytic Jacobian for one
// estimator variant. Stateless and immutable once built; eval/jac are pure.
class MomentSystem {
 public:
  EstimatorKind kind{};
  ParamLayout layout;
  std::vector<MomentBlock> blocks;
  int periods = 0;
  int t0 = 0;
  // Per-period effect predictor with a free slot for the tau it is compared
  // against; used for the default ATT row and appended window rows.
  ResidualSpec effect_template;
  // Synthetic-control level W'alpha (plus intercept where the model has one);
  // empty for systems whose baseline is not affine in theta.
  std::optional<ResidualSpec> baseline_template;
  // Windows of appended lift rows, for the solver's degenerate-baseline check.
  struct LiftRow {
    RowRange range;
    int param;
  };
  std::vector<LiftRow> lift_rows;

  int q() const {
    int n = 0;
    for (const auto& b : blocks) n += static_cast<int>(b.instruments.size());
    return n;
  }
  int p() const { return layout.size(); }
  int df() const { return q() - p(); }
  bool affine() const {
    for (const auto& b : blocks)
      if (!b.residual.bilinear.empty()) return false;
    return true;
  }

  Eigen::VectorXd eval(const Panel& panel, int row, const Eigen::VectorXd& theta) const {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(q());
    int off = 0;
    for (const auto& b : blocks) {
      const int d = static_cast<int>(b.instruments.size());
      if (b.range.contains(row)) {
        const double r = b.residual.value(panel, row, theta);
        for (int k = 0; k < d; ++k) u(off + k) = b.instruments[k].value(panel, row) * r;
      }
      off += d;
    }
    return u;
  }

  Eigen::MatrixXd jac(const Panel& panel, int row, const Eigen::VectorXd& theta) const {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(q(), p());
    Eigen::VectorXd grad(p());
    int off = 0;
    for (const auto& b : blocks) {
      const int d = static_cast<int>(b.instruments.size());
      if (b.range.contains(row)) {
        grad.setZero();
        b.residual.accumulate_gradient(panel, row, theta, grad);
        for (int k = 0; k < d; ++k)
          J.row(off + k) = b.instruments[k].value(panel, row) * grad.transpose();
      }
      off += d;
    }
    return J;
  }

  std::vector<std::string> instrument_spec() const {
    std::vector<std::string> out;
    for (const auto& b : blocks) out.push_back(b.label);
    return out;
  }
};

namespace moments_detail {

inline RowRange pre_range(const Panel& p) { return {0, p.t0}; }
inline RowRange post_range(const Panel& p) { return {p.t0, p.periods()}; }
inline RowRange all_range(const Panel& p) { return {0, p.periods()}; }

inline void add_donor_terms(ResidualSpec& r, const ParamLayout& lay, int n, double coef) {
  for (int i = 0; i < n; ++i)
    r.linear.push_back({lay.alpha_index(i), {DataRef::Kind::Donor, i, 0}, coef});
}

inline void add_surrogate_terms(ResidualSpec& r, const ParamLayout& lay, int h, double coef) {
  for (int j = 0; j < h; ++j)
    r.linear.push_back({lay.gamma_index(j), {DataRef::Kind::Surrogate, j, 0}, coef});
}

inline std::vector<DataRef> proxy_atoms(DataRef::Kind kind, int n) {
  std::vector<DataRef> v;
  for (int k = 0; k < n; ++k) v.push_back({kind, k, 0});
  return v;
}

}  // namespace moments_detail

// --- SC: unconstrained OLS of Y on (1, 1{t>T0}, W), expressed as GMM with the
// regressors as instruments. Exactly identified.
inline MomentSystem build_sc(const Panel& panel) {
  using namespace moments_detail;
  const int n = panel.n_donors();
  MomentSystem sys;
  sys.kind = EstimatorKind::Sc;
  sys.periods = panel.periods();
  sys.t0 = panel.t0;
  sys.layout.has_intercept = true;
  sys.layout.n_alpha = n;
  sys.layout.has_tau = true;

  MomentBlock b;
  b.range = all_range(panel);
  b.instruments.push_back({DataRef::Kind::One, 0, 0});
  b.instruments.push_back({DataRef::Kind::TreatInd, 0, 0});
  for (int i = 0; i < n; ++i) b.instruments.push_back({DataRef::Kind::Donor, i, 0});
  b.residual.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  b.residual.linear.push_back({sys.layout.intercept_index(), {DataRef::Kind::One, 0, 0}, -1.0});
  b.residual.linear.push_back({sys.layout.tau_index(), {DataRef::Kind::TreatInd, 0, 0}, -1.0});
  add_donor_terms(b.residual, sys.layout, n, -1.0);
  b.label = "(1, 1{t>T0}, W) x (Y - a0 - tau*1{t>T0} - W'a)";
  sys.blocks.push_back(std::move(b));

  // y minus the fitted control level; windows compare this against tau.
  sys.effect_template.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  sys.effect_template.linear.push_back(
      {sys.layout.intercept_index(), {DataRef::Kind::One, 0, 0}, -1.0});
  add_donor_terms(sys.effect_template, sys.layout, n, -1.0);
  ResidualSpec base;
  base.linear.push_back({sys.layout.intercept_index(), {DataRef::Kind::One, 0, 0}, 1.0});
  add_donor_terms(base, sys.layout, n, 1.0);
  sys.baseline_template = base;
  return sys;
}

// --- SC-S: the treatment-dummy regression of SC augmented with surrogates.
// Block one is the SC system itself, Y = a0 + tau 1{t>T0} + W'a with
// instruments (1, 1{t>T0}, W), so tau is the regression's treatment
// coefficient; block two projects the synthetic-control gap on the surrogates
// after treatment, D X x (Y - a0 - W'a - X'g), which identifies g; outcome
// covariates instrument the regression residual when present. The displayed
// surrogate-index ATT row (X'g - tau) is not used: with the surrogate
// measurement noise of the factor designs g is attenuated and that row is
// inconsistent for the ATT, while the treatment coefficient is consistent
// under stationary factors. q, p and df are unchanged.
inline MomentSystem build_sc_s(const Panel& panel) {
  using namespace moments_detail;
  const int n = panel.n_donors();
  const int h = panel.n_surrogates();
  MomentSystem sys;
  sys.kind = EstimatorKind::ScS;
  sys.periods = panel.periods();
  sys.t0 = panel.t0;
  sys.layout.has_intercept = true;
  sys.layout.n_alpha = n;
  sys.layout.n_gamma = h;
  sys.layout.has_tau = true;

  ResidualSpec reg;  // Y - a0 - tau 1{t>T0} - W'a
  reg.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  reg.linear.push_back({sys.layout.intercept_index(), {DataRef::Kind::One, 0, 0}, -1.0});
  reg.linear.push_back({sys.layout.tau_index(), {DataRef::Kind::TreatInd, 0, 0}, -1.0});
  add_donor_terms(reg, sys.layout, n, -1.0);

  MomentBlock ba;
  ba.range = all_range(panel);
  ba.instruments.push_back({DataRef::Kind::One, 0, 0});
  ba.instruments.push_back({DataRef::Kind::TreatInd, 0, 0});
  for (int i = 0; i < n; ++i) ba.instruments.push_back({DataRef::Kind::Donor, i, 0});
  ba.residual = reg;
  ba.label = "(1, 1{t>T0}, W) x (Y - a0 - tau*1{t>T0} - W'a)";
  sys.blocks.push_back(std::move(ba));

  ResidualSpec gap_on_x;  // Y - a0 - W'a - X'g
  gap_on_x.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  gap_on_x.linear.push_back({sys.layout.intercept_index(), {DataRef::Kind::One, 0, 0}, -1.0});
  add_donor_terms(gap_on_x, sys.layout, n, -1.0);
  add_surrogate_terms(gap_on_x, sys.layout, h, -1.0);

  MomentBlock bx;
  bx.range = post_range(panel);
  for (int j = 0; j < h; ++j) bx.instruments.push_back({DataRef::Kind::SurrogatePost, j, 0});
  bx.residual = gap_on_x;
  bx.label = "1{t>T0}X x (Y - a0 - W'a - X'g)";
  sys.blocks.push_back(std::move(bx));

  if (panel.n_cov_outcome() > 0) {
    MomentBlock bc;
    bc.range = all_range(panel);
    for (int k = 0; k < panel.n_cov_outcome(); ++k)
      bc.instruments.push_back({DataRef::Kind::CovOutcome, 0, k});
    bc.residual = reg;
    bc.label = "C_Y x regression residual";
    sys.blocks.push_back(std::move(bc));
  }

  // per-period effect: observed outcome minus the synthetic-control level
  sys.effect_template.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  sys.effect_template.linear.push_back(
      {sys.layout.intercept_index(), {DataRef::Kind::One, 0, 0}, -1.0});
  add_donor_terms(sys.effect_template, sys.layout, n, -1.0);

  ResidualSpec base;
  base.linear.push_back({sys.layout.intercept_index(), {DataRef::Kind::One, 0, 0}, 1.0});
  add_donor_terms(base, sys.layout, n, 1.0);
  sys.baseline_template = base;
  if (sys.q() < sys.p()) throw Error(ErrorCode::UnderIdentified, "sc-s system has q < p");
  return sys;
}

// --- PI: donor proxies identify the weights pre-treatment; one post-period
// row defines tau as the mean gap Y - W'a.
inline MomentSystem build_pi(const Panel& panel) {
  using namespace moments_detail;
  const int n = panel.n_donors();
  const int d0 = panel.n_donor_proxies();
  if (d0 < n)
    throw Error(ErrorCode::UnderIdentified,
                "pi needs d0z >= N (" + std::to_string(d0) + " < " + std::to_string(n) + ")");
  MomentSystem sys;
  sys.kind = EstimatorKind::Pi;
  sys.periods = panel.periods();
  sys.t0 = panel.t0;
  sys.layout.n_alpha = n;
  sys.layout.has_tau = true;

  MomentBlock pre;
  pre.range = pre_range(panel);
  pre.instruments = proxy_atoms(DataRef::Kind::DonorProxy, d0);
  pre.residual.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  add_donor_terms(pre.residual, sys.layout, n, -1.0);
  pre.label = "Z0 x (Y - W'a) 1{t<=T0}";
  sys.blocks.push_back(std::move(pre));

  sys.effect_template.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  add_donor_terms(sys.effect_template, sys.layout, n, -1.0);
  MomentBlock att;
  att.range = post_range(panel);
  att.instruments.push_back({DataRef::Kind::One, 0, 0});
  att.residual = sys.effect_template;
  att.residual.linear.push_back({sys.layout.tau_index(), {DataRef::Kind::One, 0, 0}, -1.0});
  att.label = "(Y - tau - W'a) 1{t>T0}";
  sys.blocks.push_back(std::move(att));

  ResidualSpec base;
  add_donor_terms(base, sys.layout, n, 1.0);
  sys.baseline_template = base;
  return sys;
}

namespace moments_detail {

// Shared assembly for PI-P and PI-S: they differ only in where the donor-side
// block sits (post vs pre) and in which residual it carries.
inline void finish_surrogate_system(MomentSystem& sys, const Panel& panel) {
  add_surrogate_terms(sys.effect_template, sys.layout, panel.n_surrogates(), 1.0);
  MomentBlock att;
  att.range = post_range(panel);
  att.instruments.push_back({DataRef::Kind::One, 0, 0});
  att.residual = sys.effect_template;
  att.residual.linear.push_back({sys.layout.tau_index(), {DataRef::Kind::One, 0, 0}, -1.0});
  att.label = "(X'g - tau) 1{t>T0}";
  sys.blocks.push_back(std::move(att));

  ResidualSpec base;
  add_donor_terms(base, sys.layout, panel.n_donors(), 1.0);
  sys.baseline_template = base;
}

}  // namespace moments_detail

// --- PI-P: post-treatment periods only; both proxy groups instrument the
// joint residual, so donors and surrogates are learned simultaneously.
inline MomentSystem build_pi_p(const Panel& panel) {
  using namespace moments_detail;
  const int n = panel.n_donors();
  const int h = panel.n_surrogates();
  const int d0 = panel.n_donor_proxies();
  const int d1 = panel.n_surrogate_proxies();
  if (d1 < 1) throw Error(ErrorCode::MissingProxies, "pi-p needs surrogate proxies (z1 columns)");
  if (d0 + d1 < n + h)
    throw Error(ErrorCode::UnderIdentified, "pi-p needs d0z + d1z >= N + H");
  MomentSystem sys;
  sys.kind = EstimatorKind::PiP;
  sys.periods = panel.periods();
  sys.t0 = panel.t0;
  sys.layout.n_alpha = n;
  sys.layout.n_gamma = h;
  sys.layout.has_tau = true;

  ResidualSpec joint;
  joint.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  add_donor_terms(joint, sys.layout, n, -1.0);
  add_surrogate_terms(joint, sys.layout, h, -1.0);

  MomentBlock bz0;
  bz0.range = post_range(panel);
  bz0.instruments = proxy_atoms(DataRef::Kind::DonorProxy, d0);
  bz0.residual = joint;
  bz0.label = "Z0 x (Y - W'a - X'g) 1{t>T0}";
  sys.blocks.push_back(std::move(bz0));

  MomentBlock bz1;
  bz1.range = post_range(panel);
  bz1.instruments = proxy_atoms(DataRef::Kind::SurrogateProxy, d1);
  bz1.residual = joint;
  bz1.label = "Z1 x (Y - W'a - X'g) 1{t>T0}";
  sys.blocks.push_back(std::move(bz1));

  finish_surrogate_system(sys, panel);
  return sys;
}

// --- PI-S: pre-period donor-proxy rows pin the weights, post-period
// surrogate-proxy rows pin the surrogate coefficients, and the ATT row defines
// tau as the mean of X'g.
inline MomentSystem build_pi_s(const Panel& panel, const InstrumentChoice& g = {}) {
  using namespace moments_detail;
  const int n = panel.n_donors();
  const int h = panel.n_surrogates();
  const int d0 = panel.n_donor_proxies();
  const int d1 = panel.n_surrogate_proxies();
  if (d1 < 1) throw Error(ErrorCode::MissingProxies, "pi-s needs surrogate proxies (z1 columns)");
  MomentSystem sys;
  sys.kind = EstimatorKind::PiS;
  sys.periods = panel.periods();
  sys.t0 = panel.t0;
  sys.layout.n_alpha = n;
  sys.layout.n_gamma = h;
  sys.layout.has_tau = true;

  MomentBlock pre;
  pre.range = pre_range(panel);
  pre.instruments = proxy_atoms(DataRef::Kind::DonorProxy, d0);
  if (g.extended) {
    pre.instruments.push_back({DataRef::Kind::One, 0, 0});
    for (const auto& a : proxy_atoms(DataRef::Kind::DonorProxySq, d0))
      pre.instruments.push_back(a);
  }
  pre.residual.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  add_donor_terms(pre.residual, sys.layout, n, -1.0);
  pre.label = "g0(Z0) x (Y - W'a) 1{t<=T0}";
  sys.blocks.push_back(std::move(pre));

  MomentBlock post;
  post.range = post_range(panel);
  post.instruments = proxy_atoms(DataRef::Kind::SurrogateProxy, d1);
  if (g.donor_proxies_post)
    for (const auto& a : proxy_atoms(DataRef::Kind::DonorProxy, d0)) post.instruments.push_back(a);
  if (g.extended) {
    post.instruments.push_back({DataRef::Kind::One, 0, 0});
    for (const auto& a : proxy_atoms(DataRef::Kind::SurrogateProxySq, d1))
      post.instruments.push_back(a);
    if (g.donor_proxies_post)
      for (const auto& a : proxy_atoms(DataRef::Kind::DonorProxySq, d0))
        post.instruments.push_back(a);
  }
  post.residual.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  add_donor_terms(post.residual, sys.layout, n, -1.0);
  add_surrogate_terms(post.residual, sys.layout, h, -1.0);
  post.label = "g1(Z1) x (Y - W'a - X'g) 1{t>T0}";
  sys.blocks.push_back(std::move(post));

  finish_surrogate_system(sys, panel);
  return sys;
}

// --- PI-S with covariate adjustment. The residuals are those of the
// covariate-stripped series Y - C_Y'xi_y, W_i - C_{W,i}'xi_w and
// X_j - C_{X,j}'xi_x, so the donor and surrogate covariate contractions enter
// the pre/post residuals with a plus sign through -W̃'a and -X̃'g. The
// parameter products make the system bilinear. Instruments are the
// covariate-augmented proxy sets.
inline MomentSystem build_pi_s_cov(const Panel& panel) {
  using namespace moments_detail;
  if (!panel.has_covariates())
    throw Error(ErrorCode::MissingCovariates, "pi-s-cov needs cy/cw/cx covariates");
  const int n = panel.n_donors();
  const int h = panel.n_surrogates();
  const int d0 = panel.n_donor_proxies();
  const int d1 = panel.n_surrogate_proxies();
  if (d1 < 1)
    throw Error(ErrorCode::MissingProxies, "pi-s-cov needs surrogate proxies (z1 columns)");
  const int py = panel.n_cov_outcome();
  const int pw = panel.n_cov_donors();
  const int px = panel.n_cov_surrogates();

  MomentSystem sys;
  sys.kind = EstimatorKind::PiSCov;
  sys.periods = panel.periods();
  sys.t0 = panel.t0;
  sys.layout.n_alpha = n;
  sys.layout.n_gamma = h;
  sys.layout.n_xi_y = py;
  sys.layout.n_xi_w = pw;
  sys.layout.n_xi_x = px;
  sys.layout.has_tau = true;

  auto ztilde0 = [&] {
    std::vector<DataRef> v = proxy_atoms(DataRef::Kind::DonorProxy, d0);
    for (int k = 0; k < py; ++k) v.push_back({DataRef::Kind::CovOutcome, 0, k});
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < pw; ++k) v.push_back({DataRef::Kind::CovDonor, i, k});
    return v;
  }();

  ResidualSpec pre_resid;
  pre_resid.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  add_donor_terms(pre_resid, sys.layout, n, -1.0);
  for (int k = 0; k < py; ++k)
    pre_resid.linear.push_back({sys.layout.xi_y_index(k), {DataRef::Kind::CovOutcome, 0, k}, -1.0});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < pw; ++k)
      pre_resid.bilinear.push_back({sys.layout.alpha_index(i), sys.layout.xi_w_index(k),
                                    {DataRef::Kind::CovDonor, i, k}, 1.0});

  MomentBlock pre;
  pre.range = pre_range(panel);
  pre.instruments = ztilde0;
  pre.residual = pre_resid;
  pre.label = "(Z0,C_Y,C_W) x adjusted pre residual";
  sys.blocks.push_back(std::move(pre));

  ResidualSpec post_resid = pre_resid;
  add_surrogate_terms(post_resid, sys.layout, h, -1.0);
  for (int j = 0; j < h; ++j)
    for (int k = 0; k < px; ++k)
      post_resid.bilinear.push_back({sys.layout.gamma_index(j), sys.layout.xi_x_index(k),
                                     {DataRef::Kind::CovSurrogate, j, k}, 1.0});

  MomentBlock post;
  post.range = post_range(panel);
  post.instruments = ztilde0;
  for (int k = 0; k < d1; ++k) post.instruments.push_back({DataRef::Kind::SurrogateProxy, k, 0});
  for (int j = 0; j < h; ++j)
    for (int k = 0; k < px; ++k) post.instruments.push_back({DataRef::Kind::CovSurrogate, j, k});
  post.residual = post_resid;
  post.label = "(Z0,C_Y,C_W,Z1,C_X) x adjusted post residual";
  sys.blocks.push_back(std::move(post));

  // effect predictor: X'g net of the surrogate covariate part
  add_surrogate_terms(sys.effect_template, sys.layout, h, 1.0);
  for (int j = 0; j < h; ++j)
    for (int k = 0; k < px; ++k)
      sys.effect_template.bilinear.push_back({sys.layout.gamma_index(j), sys.layout.xi_x_index(k),
                                              {DataRef::Kind::CovSurrogate, j, k}, -1.0});
  MomentBlock att;
  att.range = post_range(panel);
  att.instruments.push_back({DataRef::Kind::One, 0, 0});
  att.residual = sys.effect_template;
  att.residual.linear.push_back({sys.layout.tau_index(), {DataRef::Kind::One, 0, 0}, -1.0});
  att.label = "(X'g - C_X'xi_x g - tau) 1{t>T0}";
  sys.blocks.push_back(std::move(att));
  return sys;
}

// --- Contaminated surrogates: a synthetic control Psi for the surrogates
// themselves is estimated from pre-period rows, and the post-period residual
// replaces X with X - Psi'W. Two ATT rows tie tau to both the donor gap and
// the cleaned surrogate index.
inline MomentSystem build_pi_s_contam(const Panel& panel) {
  using namespace moments_detail;
  const int n = panel.n_donors();
  const int h = panel.n_surrogates();
  const int d0 = panel.n_donor_proxies();
  const int d1 = panel.n_surrogate_proxies();
  if (d1 < 1)
    throw Error(ErrorCode::MissingProxies, "pi-s-contam needs surrogate proxies (z1 columns)");
  if (d0 < n) throw Error(ErrorCode::UnderIdentified, "pi-s-contam needs d0z >= N");

  MomentSystem sys;
  sys.kind = EstimatorKind::PiSContam;
  sys.periods = panel.periods();
  sys.t0 = panel.t0;
  sys.layout.n_alpha = n;
  sys.layout.n_gamma = h;
  sys.layout.psi_rows = n;
  sys.layout.psi_cols = h;
  sys.layout.has_tau = true;

  MomentBlock pre;
  pre.range = pre_range(panel);
  pre.instruments = proxy_atoms(DataRef::Kind::DonorProxy, d0);
  pre.residual.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  add_donor_terms(pre.residual, sys.layout, n, -1.0);
  pre.label = "Z0 x (Y - W'a) 1{t<=T0}";
  sys.blocks.push_back(std::move(pre));

  for (int j = 0; j < h; ++j) {
    MomentBlock bj;
    bj.range = pre_range(panel);
    bj.instruments = proxy_atoms(DataRef::Kind::DonorProxy, d0);
    bj.residual.constant.push_back({{DataRef::Kind::Surrogate, j, 0}, 1.0});
    for (int i = 0; i < n; ++i)
      bj.residual.linear.push_back({sys.layout.psi_index(i, j), {DataRef::Kind::Donor, i, 0}, -1.0});
    bj.label = "Z0 x (X_" + std::to_string(j + 1) + " - Psi_j'W) 1{t<=T0}";
    sys.blocks.push_back(std::move(bj));
  }

  MomentBlock post;
  post.range = post_range(panel);
  post.instruments = proxy_atoms(DataRef::Kind::SurrogateProxy, d1);
  post.residual.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  add_donor_terms(post.residual, sys.layout, n, -1.0);
  add_surrogate_terms(post.residual, sys.layout, h, -1.0);
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < n; ++i)
      post.residual.bilinear.push_back({sys.layout.psi_index(i, j), sys.layout.gamma_index(j),
                                        {DataRef::Kind::Donor, i, 0}, 1.0});
  post.label = "Z1 x (Y - W'a - (X - Psi'W)'g) 1{t>T0}";
  sys.blocks.push_back(std::move(post));

  MomentBlock att_y;
  att_y.range = post_range(panel);
  att_y.instruments.push_back({DataRef::Kind::One, 0, 0});
  att_y.residual.constant.push_back({{DataRef::Kind::Outcome, 0, 0}, 1.0});
  att_y.residual.linear.push_back({sys.layout.tau_index(), {DataRef::Kind::One, 0, 0}, -1.0});
  add_donor_terms(att_y.residual, sys.layout, n, -1.0);
  att_y.label = "(Y - tau - W'a) 1{t>T0}";
  sys.blocks.push_back(std::move(att_y));

  add_surrogate_terms(sys.effect_template, sys.layout, h, 1.0);
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < n; ++i)
      sys.effect_template.bilinear.push_back({sys.layout.psi_index(i, j),
                                              sys.layout.gamma_index(j),
                                              {DataRef::Kind::Donor, i, 0}, -1.0});
  MomentBlock att_x;
  att_x.range = post_range(panel);
  att_x.instruments.push_back({DataRef::Kind::One, 0, 0});
  att_x.residual = sys.effect_template;
  att_x.residual.linear.push_back({sys.layout.tau_index(), {DataRef::Kind::One, 0, 0}, -1.0});
  att_x.label = "((X - Psi'W)'g - tau) 1{t>T0}";
  sys.blocks.push_back(std::move(att_x));
  return sys;
}

namespace moments_detail {

// Remaps parameter indices in a residual copied from a system whose layout is
// about to gain extra slots; indices are stable because extras append at the
// end, so this is a plain copy today. Kept as a function to make that
// assumption explicit.
inline ResidualSpec clone_residual(const ResidualSpec& r) { return r; }

inline RowRange window_rows(const MomentSystem& sys, int t1, int t2) {
  // 1-based exclusive bounds t1 < t < t2  ->  0-based rows [t1, t2-1).
  if (!(sys.t0 <= t1 && t1 < t2 && t2 <= sys.periods + 1))
    throw Error(ErrorCode::BadConfig, "window must satisfy T0 <= t1 < t2 <= T+1");
  if (t2 - t1 < 2) throw Error(ErrorCode::EmptyWindow, "window (t1,t2) contains no periods");
  return {t1, t2 - 1};
}

}  // namespace moments_detail

// Appends the moment E[(effect_t - tau_window) 1{t1 < t < t2}] = 0 together
// with its parameter. Exactly identified addition: the base fit is unchanged.
inline MomentSystem add_window_att(MomentSystem sys, int t1, int t2) {
  using namespace moments_detail;
  const RowRange rows = window_rows(sys, t1, t2);
  const std::string name =
      "tau_window_" + std::to_string(t1) + "_" + std::to_string(t2);
  sys.layout.extras.push_back(name);
  const int idx = sys.layout.extra_index(static_cast<int>(sys.layout.extras.size()) - 1);

  MomentBlock b;
  b.range = rows;
  b.instruments.push_back({DataRef::Kind::One, 0, 0});
  b.residual = clone_residual(sys.effect_template);
  b.residual.linear.push_back({idx, {DataRef::Kind::One, 0, 0}, -1.0});
  b.label = "(effect - " + name + ") 1{t1<t<t2}";
  sys.blocks.push_back(std::move(b));
  return sys;
}

// Appends the percentage-lift moment E[(X'g - W'a tau_lift) 1{t1 < t < t2}] = 0.
// The product of the baseline and tau_lift makes the system bilinear. Only
// systems with an affine effect and baseline support this row.
inline MomentSystem add_lift(MomentSystem sys, int t1, int t2) {
  using namespace moments_detail;
  const RowRange rows = window_rows(sys, t1, t2);
  if (!sys.baseline_template || !sys.effect_template.bilinear.empty())
    throw Error(ErrorCode::BadConfig,
                "lift rows are not supported for covariate/contaminated systems");
  const std::string name = "tau_lift_" + std::to_string(t1) + "_" + std::to_string(t2);
  sys.layout.extras.push_back(name);
  const int idx = sys.layout.extra_index(static_cast<int>(sys.layout.extras.size()) - 1);

  MomentBlock b;
  b.range = rows;
  b.instruments.push_back({DataRef::Kind::One, 0, 0});
  b.residual = clone_residual(sys.effect_template);
  for (const auto& c : sys.baseline_template->constant)
    b.residual.linear.push_back({idx, c.src, -c.coef});
  for (const auto& l : sys.baseline_template->linear)
    b.residual.bilinear.push_back({l.param, idx, l.src, -l.coef});
  b.label = "(effect - baseline * " + name + ") 1{t1<t<t2}";
  sys.blocks.push_back(std::move(b));
  sys.lift_rows.push_back({rows, idx});
  return sys;
}

}  // namespace pcsc
