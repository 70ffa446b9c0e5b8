#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pcsc/panel.hpp"

namespace pcsc {

// The CSV carries no treatment date, so the caller must supply it.
struct PanelSchema {
  int t0 = 0;
};

namespace csv_detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_cell(const std::string& s, int row, int col) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || ptr != e)
    throw Error(ErrorCode::NonFiniteValue, "cell '" + s + "' at row " + std::to_string(row) +
                                               ", col " + std::to_string(col) +
                                               " is not a number");
  return v;
}

// Index of columns named prefix1..prefixK; throws if the run is not contiguous
// from 1.
inline std::vector<int> indexed_columns(const std::map<std::string, int>& header,
                                        const std::string& prefix) {
  std::vector<int> cols;
  for (int k = 1;; ++k) {
    auto it = header.find(prefix + std::to_string(k));
    if (it == header.end()) break;
    cols.push_back(it->second);
  }
  return cols;
}

// Columns prefix_<unit>_<k> for unit = 1..n_units, k = 1..n_comp.
inline std::vector<std::vector<int>> unit_columns(const std::map<std::string, int>& header,
                                                  const std::string& prefix, int* n_comp_out) {
  std::vector<std::vector<int>> units;
  int n_comp = 0;
  for (int u = 1;; ++u) {
    std::vector<int> cols;
    for (int k = 1;; ++k) {
      auto it = header.find(prefix + std::to_string(u) + "_" + std::to_string(k));
      if (it == header.end()) break;
      cols.push_back(it->second);
    }
    if (cols.empty()) break;
    if (u == 1)
      n_comp = static_cast<int>(cols.size());
    else if (static_cast<int>(cols.size()) != n_comp)
      throw Error(ErrorCode::MissingColumn, "ragged " + prefix + "* column group");
    units.push_back(std::move(cols));
  }
  *n_comp_out = n_comp;
  return units;
}

}  // namespace csv_detail

inline Panel load_panel(const std::string& path, const PanelSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, "empty file " + path);
  const auto names = csv_detail::split_line(line);
  std::map<std::string, int> header;
  for (int i = 0; i < static_cast<int>(names.size()); ++i) header[names[i]] = i;

  auto require = [&](const std::string& name) {
    auto it = header.find(name);
    if (it == header.end()) throw Error(ErrorCode::MissingColumn, "column '" + name + "'");
    return it->second;
  };
  const int col_t = require("t");
  const int col_y = require("y");
  const auto cols_w = csv_detail::indexed_columns(header, "w");
  const auto cols_x = csv_detail::indexed_columns(header, "x");
  const auto cols_z0 = csv_detail::indexed_columns(header, "z0_");
  const auto cols_z1 = csv_detail::indexed_columns(header, "z1_");
  const auto cols_cy = csv_detail::indexed_columns(header, "cy_");
  int p_w = 0, p_x = 0;
  const auto cols_cw = csv_detail::unit_columns(header, "cw_", &p_w);
  const auto cols_cx = csv_detail::unit_columns(header, "cx_", &p_x);
  if (cols_w.empty()) throw Error(ErrorCode::MissingColumn, "donor columns w1..");
  if (cols_x.empty()) throw Error(ErrorCode::MissingColumn, "surrogate columns x1..");
  if (cols_z0.empty()) throw Error(ErrorCode::MissingColumn, "proxy columns z0_1..");

  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = csv_detail::split_line(line);
    if (cells.size() != names.size())
      throw Error(ErrorCode::RowCountMismatch,
                  "row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(names.size()));
    std::vector<double> vals(cells.size());
    for (int c = 0; c < static_cast<int>(cells.size()); ++c)
      vals[c] = csv_detail::parse_cell(cells[c], line_no, c + 1);
    rows.push_back(std::move(vals));
  }
  const int T = static_cast<int>(rows.size());
  if (T == 0) throw Error(ErrorCode::RowCountMismatch, "no data rows in " + path);

  for (int r = 0; r < T; ++r) {
    if (rows[r][col_t] != static_cast<double>(r + 1))
      throw Error(ErrorCode::RowCountMismatch,
                  "t column must run 1..T in order; row " + std::to_string(r + 2));
  }

  Panel p;
  p.t0 = schema.t0;
  auto fill_vec = [&](int col) {
    Eigen::VectorXd v(T);
    for (int r = 0; r < T; ++r) v(r) = rows[r][col];
    return v;
  };
  auto fill_mat = [&](const std::vector<int>& cols) {
    Eigen::MatrixXd m(T, static_cast<int>(cols.size()));
    for (int c = 0; c < static_cast<int>(cols.size()); ++c)
      for (int r = 0; r < T; ++r) m(r, c) = rows[r][cols[c]];
    return m;
  };
  p.outcome = fill_vec(col_y);
  p.donors = fill_mat(cols_w);
  p.surrogates = fill_mat(cols_x);
  p.donor_proxies = fill_mat(cols_z0);
  p.surrogate_proxies = cols_z1.empty() ? Eigen::MatrixXd(T, 0) : fill_mat(cols_z1);
  p.cov_outcome = cols_cy.empty() ? Eigen::MatrixXd(T, 0) : fill_mat(cols_cy);
  for (const auto& cols : cols_cw) p.cov_donors.push_back(fill_mat(cols));
  for (const auto& cols : cols_cx) p.cov_surrogates.push_back(fill_mat(cols));
  if (!p.cov_donors.empty() && static_cast<int>(p.cov_donors.size()) != p.n_donors())
    throw Error(ErrorCode::MissingColumn, "cw_* groups must cover every donor");
  if (!p.cov_surrogates.empty() && static_cast<int>(p.cov_surrogates.size()) != p.n_surrogates())
    throw Error(ErrorCode::MissingColumn, "cx_* groups must cover every surrogate");

  p.validate();
  return p;
}

inline void save_panel(const Panel& panel, const std::string& path) {
  panel.validate();
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);

  std::ostringstream header;
  header << "t,y";
  for (int i = 1; i <= panel.n_donors(); ++i) header << ",w" << i;
  for (int i = 1; i <= panel.n_surrogates(); ++i) header << ",x" << i;
  for (int i = 1; i <= panel.n_donor_proxies(); ++i) header << ",z0_" << i;
  for (int i = 1; i <= panel.n_surrogate_proxies(); ++i) header << ",z1_" << i;
  for (int i = 1; i <= panel.n_cov_outcome(); ++i) header << ",cy_" << i;
  for (int u = 1; u <= static_cast<int>(panel.cov_donors.size()); ++u)
    for (int k = 1; k <= panel.n_cov_donors(); ++k) header << ",cw_" << u << "_" << k;
  for (int u = 1; u <= static_cast<int>(panel.cov_surrogates.size()); ++u)
    for (int k = 1; k <= panel.n_cov_surrogates(); ++k) header << ",cx_" << u << "_" << k;
  out << header.str() << "\n";

  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << ',' << buf;
  };
  for (int r = 0; r < panel.periods(); ++r) {
    out << (r + 1);
    put(panel.outcome(r));
    for (int c = 0; c < panel.n_donors(); ++c) put(panel.donors(r, c));
    for (int c = 0; c < panel.n_surrogates(); ++c) put(panel.surrogates(r, c));
    for (int c = 0; c < panel.n_donor_proxies(); ++c) put(panel.donor_proxies(r, c));
    for (int c = 0; c < panel.n_surrogate_proxies(); ++c) put(panel.surrogate_proxies(r, c));
    for (int c = 0; c < panel.n_cov_outcome(); ++c) put(panel.cov_outcome(r, c));
    for (const auto& m : panel.cov_donors)
      for (int c = 0; c < m.cols(); ++c) put(m(r, c));
    for (const auto& m : panel.cov_surrogates)
      for (int c = 0; c < m.cols(); ++c) put(m(r, c));
    out << "\n";
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

}  // namespace pcsc
