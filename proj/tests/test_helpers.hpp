#pragma once

#include <Eigen/Dense>

#include "pcsc/dgp.hpp"
#include "pcsc/panel.hpp"
#include "pcsc/rng.hpp"

namespace test_helpers {

// Small random panel with every column group populated; dimensions chosen per
// test. Values are plain gaussians, no structural model.
inline pcsc::Panel random_panel(int T, int t0, int n, int h, int d0, int d1, std::uint64_t seed,
                                bool with_cov = false) {
  pcsc::CounterRng rng(seed);
  auto mat = [&](int cols) {
    Eigen::MatrixXd m(T, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < T; ++r) m(r, c) = rng.next_normal();
    return m;
  };
  pcsc::Panel p;
  p.t0 = t0;
  p.outcome = mat(1).col(0);
  p.donors = mat(n);
  p.surrogates = mat(h);
  p.donor_proxies = mat(d0);
  p.surrogate_proxies = d1 > 0 ? mat(d1) : Eigen::MatrixXd(T, 0);
  if (with_cov) {
    p.cov_outcome = mat(1);
    for (int i = 0; i < n; ++i) p.cov_donors.push_back(mat(1));
    for (int j = 0; j < h; ++j) p.cov_surrogates.push_back(mat(1));
  } else {
    p.cov_outcome.resize(T, 0);
  }
  p.validate();
  return p;
}

// Noiseless design-based configs used across tests: errors off and the effect
// factors frozen at their means, so every moment vanishes at the truth.
inline pcsc::DgpConfig noiseless_config(int F, int K, int T, std::uint64_t seed) {
  pcsc::DgpConfig cfg;
  cfg.F = F;
  cfg.K = K;
  cfg.T = T;
  cfg.T0 = T / 2;
  cfg.seed = seed;
  cfg.noise_scale = 0.0;
  cfg.effect_factor_sd = 0.0;
  return cfg;
}

}  // namespace test_helpers
