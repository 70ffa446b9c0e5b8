#pragma once

// Proximal synthetic control with surrogates: panel model, stacked GMM moment
// systems for the estimator family, sandwich/HAC inference, simulation DGP,
// and the Monte Carlo harness.

#include "pcsc/dgp.hpp"
#include "pcsc/error.hpp"
#include "pcsc/gmm.hpp"
#include "pcsc/moment_systems.hpp"
#include "pcsc/monte_carlo.hpp"
#include "pcsc/panel.hpp"
#include "pcsc/panel_csv.hpp"
#include "pcsc/params.hpp"
#include "pcsc/rng.hpp"
#include "pcsc/stats.hpp"
