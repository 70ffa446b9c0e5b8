#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "pcsc/error.hpp"

namespace pcsc {

// Observed data for one treated unit: its outcome, donor outcomes, surrogate
// outcomes, the two proxy groups, and optional covariates. Time runs t = 1..T
// in user-facing documents and CSV; internally everything is 0-based, so
// period t (1-based) lives in row t-1 and the post-treatment periods are rows
// t0..T-1. Immutable after construction; safe to share across threads.
struct Panel {
  int t0 = 0;                        // last pre-treatment period, 1-based
  Eigen::VectorXd outcome;           // T
  Eigen::MatrixXd donors;            // T x N
  Eigen::MatrixXd surrogates;        // T x H
  Eigen::MatrixXd donor_proxies;     // T x d0z
  Eigen::MatrixXd surrogate_proxies; // T x d1z (may have 0 columns)
  Eigen::MatrixXd cov_outcome;       // T x p_y (0 columns when absent)
  std::vector<Eigen::MatrixXd> cov_donors;     // N matrices, each T x p_w
  std::vector<Eigen::MatrixXd> cov_surrogates; // H matrices, each T x p_x

  int periods() const { return static_cast<int>(outcome.size()); }
  int n_donors() const { return static_cast<int>(donors.cols()); }
  int n_surrogates() const { return static_cast<int>(surrogates.cols()); }
  int n_donor_proxies() const { return static_cast<int>(donor_proxies.cols()); }
  int n_surrogate_proxies() const { return static_cast<int>(surrogate_proxies.cols()); }
  int n_cov_outcome() const { return static_cast<int>(cov_outcome.cols()); }
  int n_cov_donors() const {
    return cov_donors.empty() ? 0 : static_cast<int>(cov_donors.front().cols());
  }
  int n_cov_surrogates() const {
    return cov_surrogates.empty() ? 0 : static_cast<int>(cov_surrogates.front().cols());
  }
  bool has_covariates() const {
    return n_cov_outcome() > 0 && !cov_donors.empty() && !cov_surrogates.empty();
  }

  // row index is 0-based
  bool is_post(int row) const { return row >= t0; }

  void validate() const {
    const int T = periods();
    if (T < 3) throw Error(ErrorCode::RowCountMismatch, "panel needs at least 3 periods");
    if (!(1 < t0 && t0 < T))
      throw Error(ErrorCode::BadT0,
                  "need 1 < T0 < T, got T0=" + std::to_string(t0) + " T=" + std::to_string(T));
    if (n_donors() < 1) throw Error(ErrorCode::RowCountMismatch, "need at least one donor");
    if (n_surrogates() < 1) throw Error(ErrorCode::RowCountMismatch, "need at least one surrogate");
    if (n_donor_proxies() < 1)
      throw Error(ErrorCode::RowCountMismatch, "need at least one donor proxy");
    check_rows(donors, T, "donors");
    check_rows(surrogates, T, "surrogates");
    check_rows(donor_proxies, T, "donor_proxies");
    if (surrogate_proxies.size() > 0) check_rows(surrogate_proxies, T, "surrogate_proxies");
    if (cov_outcome.size() > 0) check_rows(cov_outcome, T, "cov_outcome");
    if (!cov_donors.empty() && static_cast<int>(cov_donors.size()) != n_donors())
      throw Error(ErrorCode::RowCountMismatch, "cov_donors must have one block per donor");
    if (!cov_surrogates.empty() && static_cast<int>(cov_surrogates.size()) != n_surrogates())
      throw Error(ErrorCode::RowCountMismatch, "cov_surrogates must have one block per surrogate");
    for (const auto& m : cov_donors) check_rows(m, T, "cov_donors");
    for (const auto& m : cov_surrogates) check_rows(m, T, "cov_surrogates");
    check_finite(outcome, "y");
    check_finite(donors, "donors");
    check_finite(surrogates, "surrogates");
    check_finite(donor_proxies, "donor_proxies");
    check_finite(surrogate_proxies, "surrogate_proxies");
    check_finite(cov_outcome, "cov_outcome");
    for (const auto& m : cov_donors) check_finite(m, "cov_donors");
    for (const auto& m : cov_surrogates) check_finite(m, "cov_surrogates");
  }

 private:
  static void check_rows(const Eigen::MatrixXd& m, int T, const char* name) {
    if (static_cast<int>(m.rows()) != T)
      throw Error(ErrorCode::RowCountMismatch,
                  std::string(name) + " has " + std::to_string(m.rows()) + " rows, expected " +
                      std::to_string(T));
  }
  static void check_finite(const Eigen::MatrixXd& m, const char* name) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        if (!std::isfinite(m(i, j)))
          throw Error(ErrorCode::NonFiniteValue, std::string(name) + " at row " +
                                                     std::to_string(i + 1) + ", col " +
                                                     std::to_string(j + 1));
  }
};

// Contiguous range of periods of a panel; references, never copies.
struct PanelView {
  const Panel* panel = nullptr;
  int begin_row = 0;  // 0-based, inclusive
  int end_row = 0;    // 0-based, exclusive

  int length() const { return end_row - begin_row; }
  int first_period() const { return begin_row + 1; }  // 1-based
  int last_period() const { return end_row; }         // 1-based

  auto outcome() const { return panel->outcome.segment(begin_row, length()); }
  auto donors() const { return panel->donors.middleRows(begin_row, length()); }
  auto surrogates() const { return panel->surrogates.middleRows(begin_row, length()); }
};

inline std::pair<PanelView, PanelView> split_pre_post(const Panel& panel) {
  PanelView pre{&panel, 0, panel.t0};
  PanelView post{&panel, panel.t0, panel.periods()};
  return {pre, post};
}

}  // namespace pcsc
