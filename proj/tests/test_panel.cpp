#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pcsc/dgp.hpp"
#include "pcsc/moment_systems.hpp"
#include "pcsc/panel.hpp"
#include "pcsc/panel_csv.hpp"
#include "test_helpers.hpp"

using namespace pcsc;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

const std::string kSmallCsv =
    "t,y,w1,x1,z0_1,z1_1\n"
    "1,1.0,0.5,0.1,0.4,0.2\n"
    "2,1.1,0.6,0.2,0.5,0.3\n"
    "3,1.2,0.7,0.3,0.6,0.4\n"
    "4,2.2,0.8,0.9,0.7,0.8\n"
    "5,2.3,0.9,1.0,0.8,0.9\n"
    "6,2.4,1.0,1.1,0.9,1.0\n";

}  // namespace

TEST_CASE("load_panel reads a minimal well-formed file") {
  const auto path = temp_file("pcsc_small.csv");
  write_file(path, kSmallCsv);
  const Panel p = load_panel(path.string(), {.t0 = 3});
  CHECK(p.periods() == 6);
  CHECK(p.t0 == 3);
  CHECK(p.n_donors() == 1);
  CHECK(p.n_surrogates() == 1);
  CHECK(p.n_donor_proxies() == 1);
  CHECK(p.n_surrogate_proxies() == 1);
  CHECK(p.outcome(0) == 1.0);
  CHECK(p.surrogate_proxies(5, 0) == 1.0);
}

TEST_CASE("load_panel error cases") {
  SECTION("NaN cell") {
    const auto path = temp_file("pcsc_nan.csv");
    std::string text = kSmallCsv;
    text.replace(text.find("0.6,"), 4, "NaN,");
    write_file(path, text);
    try {
      load_panel(path.string(), {.t0 = 3});
      FAIL("expected NonFiniteValue");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFiniteValue);
    }
  }
  SECTION("missing required column") {
    const auto path = temp_file("pcsc_missing.csv");
    write_file(path, "t,w1,x1,z0_1\n1,1,1,1\n2,1,1,1\n3,1,1,1\n");
    try {
      load_panel(path.string(), {.t0 = 2});
      FAIL("expected MissingColumn");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MissingColumn);
    }
  }
  SECTION("bad T0") {
    const auto path = temp_file("pcsc_small2.csv");
    write_file(path, kSmallCsv);
    try {
      load_panel(path.string(), {.t0 = 6});
      FAIL("expected BadT0");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadT0);
    }
    try {
      load_panel(path.string(), {.t0 = 1});
      FAIL("expected BadT0");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadT0);
    }
  }
  SECTION("ragged row") {
    const auto path = temp_file("pcsc_ragged.csv");
    write_file(path, "t,y,w1,x1,z0_1\n1,1,1,1,1\n2,1,1,1\n3,1,1,1,1\n");
    try {
      load_panel(path.string(), {.t0 = 2});
      FAIL("expected RowCountMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::RowCountMismatch);
    }
  }
  SECTION("unreadable path") {
    CHECK_THROWS_AS(load_panel("/nonexistent/dir/panel.csv", {.t0 = 2}), Error);
  }
}

TEST_CASE("save_panel writes header plus one row per period") {
  const auto path = temp_file("pcsc_roundtrip_count.csv");
  const Panel p = test_helpers::random_panel(6, 3, 1, 1, 1, 1, 42);
  save_panel(p, path.string());
  std::ifstream in(path);
  int lines = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 7);
}

TEST_CASE("save then load is the identity, covariates included") {
  const auto path = temp_file("pcsc_roundtrip.csv");
  const Panel p = test_helpers::random_panel(9, 4, 2, 3, 2, 2, 7, /*with_cov=*/true);
  save_panel(p, path.string());
  const Panel q = load_panel(path.string(), {.t0 = 4});
  CHECK(q.outcome == p.outcome);
  CHECK(q.donors == p.donors);
  CHECK(q.surrogates == p.surrogates);
  CHECK(q.donor_proxies == p.donor_proxies);
  CHECK(q.surrogate_proxies == p.surrogate_proxies);
  CHECK(q.cov_outcome == p.cov_outcome);
  REQUIRE(q.cov_donors.size() == p.cov_donors.size());
  for (size_t i = 0; i < p.cov_donors.size(); ++i) CHECK(q.cov_donors[i] == p.cov_donors[i]);
  REQUIRE(q.cov_surrogates.size() == p.cov_surrogates.size());
  for (size_t i = 0; i < p.cov_surrogates.size(); ++i)
    CHECK(q.cov_surrogates[i] == p.cov_surrogates[i]);
}

TEST_CASE("simulated panel round-trips bit-identically through CSV") {
  DgpConfig cfg;
  cfg.F = 2;
  cfg.K = 1;
  cfg.T = 40;
  cfg.T0 = 20;
  cfg.seed = 99;
  const Panel p = simulate_dgp(cfg);
  const auto path = temp_file("pcsc_sim_roundtrip.csv");
  save_panel(p, path.string());
  const Panel q = load_panel(path.string(), {.t0 = cfg.T0});
  CHECK(q.outcome == p.outcome);
  CHECK(q.donors == p.donors);
  CHECK(q.surrogates == p.surrogates);
  CHECK(q.donor_proxies == p.donor_proxies);
  CHECK(q.surrogate_proxies == p.surrogate_proxies);
}

TEST_CASE("panel without surrogate-proxy columns supports non-surrogate estimators only") {
  const auto path = temp_file("pcsc_noz1.csv");
  write_file(path,
             "t,y,w1,x1,z0_1\n"
             "1,1.0,0.5,0.1,0.4\n2,1.1,0.6,0.2,0.5\n3,1.2,0.7,0.3,0.6\n"
             "4,2.2,0.8,0.9,0.7\n5,2.3,0.9,1.0,0.8\n6,2.4,1.0,1.1,0.9\n");
  const Panel p = load_panel(path.string(), {.t0 = 3});
  CHECK(p.n_surrogate_proxies() == 0);
  CHECK_NOTHROW(build_sc(p));
  CHECK_NOTHROW(build_pi(p));
  try {
    build_pi_s(p);
    FAIL("expected MissingProxies");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingProxies);
  }
}

TEST_CASE("panel without covariates emits no covariate columns") {
  const auto path = temp_file("pcsc_nocov.csv");
  const Panel p = test_helpers::random_panel(6, 3, 2, 1, 2, 1, 5);
  save_panel(p, path.string());
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header.find("cy_") == std::string::npos);
  CHECK(header.find("cw_") == std::string::npos);
  CHECK(header.find("cx_") == std::string::npos);
  CHECK(header == "t,y,w1,w2,x1,z0_1,z0_2,z1_1");
}

TEST_CASE("panel validation rejects row-count mismatches and non-finite cells") {
  Panel p = test_helpers::random_panel(8, 4, 2, 1, 2, 1, 11);
  SECTION("short matrix") {
    p.donors = p.donors.topRows(7).eval();
    try {
      p.validate();
      FAIL("expected RowCountMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::RowCountMismatch);
    }
  }
  SECTION("infinite value") {
    p.surrogates(3, 0) = std::numeric_limits<double>::infinity();
    try {
      p.validate();
      FAIL("expected NonFiniteValue");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFiniteValue);
    }
  }
}

TEST_CASE("split_pre_post partitions the periods") {
  SECTION("paper-sized panel") {
    const Panel p = test_helpers::random_panel(200, 100, 1, 1, 1, 1, 3);
    const auto [pre, post] = split_pre_post(p);
    CHECK(pre.length() == 100);
    CHECK(post.length() == 100);
  }
  SECTION("minimal panel") {
    const Panel p = test_helpers::random_panel(3, 2, 1, 1, 1, 1, 3);
    const auto [pre, post] = split_pre_post(p);
    CHECK(pre.length() == 2);
    CHECK(post.length() == 1);
  }
  SECTION("views reference the panel and cover it exactly") {
    const Panel p = test_helpers::random_panel(17, 5, 1, 1, 1, 1, 3);
    const auto [pre, post] = split_pre_post(p);
    CHECK(pre.panel == &p);
    CHECK(post.panel == &p);
    CHECK(pre.begin_row == 0);
    CHECK(pre.end_row == post.begin_row);
    CHECK(post.end_row == p.periods());
    // post view holds periods T0+1 .. T (1-based)
    CHECK(post.first_period() == p.t0 + 1);
    CHECK(post.last_period() == p.periods());
    CHECK(post.outcome()(0) == p.outcome(p.t0));
  }
}
