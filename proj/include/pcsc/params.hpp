#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "pcsc/error.hpp"

namespace pcsc {

// Flat layout, in order: alpha0 | alpha | gamma | xi (xi_y, xi_w, xi_x) |
// vec(psi) column-major | tau | extras (window/lift parameters appended in
// insertion order). Absent groups occupy no slots.
struct ParamLayout {
  bool has_intercept = false;
  int n_alpha = 0;
  int n_gamma = 0;
  int n_xi_y = 0;
  int n_xi_w = 0;
  int n_xi_x = 0;
  int psi_rows = 0;  // donors
  int psi_cols = 0;  // surrogates
  bool has_tau = false;
  std::vector<std::string> extras;

  int size() const {
    return (has_intercept ? 1 : 0) + n_alpha + n_gamma + n_xi_y + n_xi_w + n_xi_x +
           psi_rows * psi_cols + (has_tau ? 1 : 0) + static_cast<int>(extras.size());
  }

  int intercept_index() const { return 0; }
  int alpha_index(int i) const { return (has_intercept ? 1 : 0) + i; }
  int gamma_index(int j) const { return alpha_index(n_alpha) + j; }
  int xi_y_index(int k) const { return gamma_index(n_gamma) + k; }
  int xi_w_index(int k) const { return xi_y_index(n_xi_y) + k; }
  int xi_x_index(int k) const { return xi_w_index(n_xi_w) + k; }
  int psi_index(int donor, int surrogate) const {
    return xi_x_index(n_xi_x) + surrogate * psi_rows + donor;
  }
  int tau_index() const { return xi_x_index(n_xi_x) + psi_rows * psi_cols; }
  int extra_index(int k) const { return tau_index() + (has_tau ? 1 : 0) + k; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    if (has_intercept) out.push_back("alpha0");
    for (int i = 0; i < n_alpha; ++i) out.push_back("alpha" + std::to_string(i + 1));
    for (int j = 0; j < n_gamma; ++j) out.push_back("gamma" + std::to_string(j + 1));
    for (int k = 0; k < n_xi_y; ++k) out.push_back("xi_y" + std::to_string(k + 1));
    for (int k = 0; k < n_xi_w; ++k) out.push_back("xi_w" + std::to_string(k + 1));
    for (int k = 0; k < n_xi_x; ++k) out.push_back("xi_x" + std::to_string(k + 1));
    for (int j = 0; j < psi_cols; ++j)
      for (int i = 0; i < psi_rows; ++i)
        out.push_back("psi_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
    if (has_tau) out.push_back("tau");
    for (const auto& e : extras) out.push_back(e);
    return out;
  }
};

// A parameter point together with its layout; `values` is the flat form.
struct ParamVector {
  ParamLayout layout;
  Eigen::VectorXd values;

  ParamVector() = default;
  explicit ParamVector(const ParamLayout& l) : layout(l), values(Eigen::VectorXd::Zero(l.size())) {}
  ParamVector(const ParamLayout& l, Eigen::VectorXd v) : layout(l), values(std::move(v)) {
    if (values.size() != layout.size())
      throw Error(ErrorCode::BadConfig, "parameter vector length does not match layout");
  }

  double intercept() const { return layout.has_intercept ? values(layout.intercept_index()) : 0.0; }
  Eigen::VectorXd alpha() const { return values.segment(layout.alpha_index(0), layout.n_alpha); }
  Eigen::VectorXd gamma() const { return values.segment(layout.gamma_index(0), layout.n_gamma); }
  Eigen::VectorXd xi_y() const { return values.segment(layout.xi_y_index(0), layout.n_xi_y); }
  Eigen::VectorXd xi_w() const { return values.segment(layout.xi_w_index(0), layout.n_xi_w); }
  Eigen::VectorXd xi_x() const { return values.segment(layout.xi_x_index(0), layout.n_xi_x); }
  Eigen::MatrixXd psi() const {
    Eigen::MatrixXd m(layout.psi_rows, layout.psi_cols);
    for (int j = 0; j < layout.psi_cols; ++j)
      for (int i = 0; i < layout.psi_rows; ++i) m(i, j) = values(layout.psi_index(i, j));
    return m;
  }
  double tau() const {
    if (!layout.has_tau) throw Error(ErrorCode::BadConfig, "system has no tau parameter");
    return values(layout.tau_index());
  }
  double extra(int k) const { return values(layout.extra_index(k)); }
};

}  // namespace pcsc
