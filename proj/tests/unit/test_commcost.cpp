#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "pfedlvm/commcost.hpp"
#include "pfedlvm/rng.hpp"

using namespace pfedlvm;

TEST_CASE("Eq. 7") {
  CHECK(m_pfl({100, 2, 8, 10, 1, 1, 3}) == 1440);
  CHECK(m_pfl({64, 5, 64, 7, 1, 1, 4}) == 2 * 5 * 7 * 4);
  CHECK(m_pfl_directional({100, 2, 8, 10, 1, 1, 3}, 10, 40) == 2 * 12 * 50 * 3);
  CHECK(m_pfl_directional({100, 2, 8, 10, 1, 1, 3}, 10, 10) == 1440);
  CHECK_THROWS_AS(m_pfl({8, 1, 16, 1, 1, 1, 1}), ConfigError);
  CHECK_THROWS_AS(m_pfl({8, 0, 4, 1, 1, 1, 1}), ConfigError);
}

TEST_CASE("Eq. 8") {
  CHECK(m_fl({100, 4, 8, 1, 1000, 2, 3}) == 12000);
  CHECK(m_fl({100, 1, 8, 1, 1000, 2, 3}) == 0);
  CHECK(m_fl({100, 5, 8, 1, 1000, 2, 3}) == 12000);
}

TEST_CASE("Eq. 9") {
  SUBCASE("break-even") {
    // (F_b/M_b) * floor(S/B) * sigma = (10/200) * 10 * 2 = 1, sigma | N_b.
    const Savings s = savings({80, 6, 8, 10, 200, 2, 3});
    CHECK(s.exact == doctest::Approx(0.0).scale(1.0));
    CHECK(s.approximate == doctest::Approx(0.0).scale(1.0));
  }
  SUBCASE("undefined without exchanges") {
    CHECK_THROWS_AS(savings({100, 1, 8, 1, 1000, 2, 3}), std::domain_error);
  }
  SUBCASE("hand value") {
    const CommParams p{100, 4, 8, 10, 1000, 2, 3};
    CHECK(savings(p).exact == doctest::Approx(1.0 - 2880.0 / 12000.0).epsilon(1e-15));
    CHECK(savings(p).approximate == doctest::Approx(1.0 - 0.01 * 12 * 2).epsilon(1e-15));
  }
}

TEST_CASE("savings monotonicity") {
  const CommParams base{200, 400, 8, 1000, 1000000, 2, 3};
  double prev = 2.0;
  for (std::uint64_t f : {500u, 1000u, 2000u, 4000u, 8000u}) {
    CommParams p = base;
    p.F_b = f;
    const double e = savings(p).exact;
    CHECK(e < prev);
    prev = e;
  }
  prev = 2.0;
  for (std::uint64_t s : {1u, 2u, 4u, 5u, 8u}) {
    CommParams p = base;
    p.sigma = s;
    const double e = savings(p).exact;
    CHECK(e < prev);
    prev = e;
  }
  prev = -1e9;
  for (std::uint64_t m : {100000u, 200000u, 500000u, 1000000u, 4000000u}) {
    CommParams p = base;
    p.M_b = m;
    const double e = savings(p).exact;
    CHECK(e > prev);
    prev = e;
  }
  for (std::uint64_t b = 1; b < 64; ++b) {
    CommParams p = base, q = base;
    p.B_s = b;
    q.B_s = b + 1;
    CHECK(std::abs(savings(p).exact - savings(q).exact) <= floor_step_bound(p));
  }
}

TEST_CASE("exact and approximate savings converge") {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    CommParams p;
    p.sigma = 1 + rng.below(5);
    p.N_b = 100 * p.sigma + rng.below(500);
    p.S_max = 16 + rng.below(400);
    p.B_s = 1 + rng.below(16);
    p.M_b = 100000 + rng.below(900000);
    p.F_b = 1 + rng.below(p.M_b / (p.S_max / p.B_s * p.sigma) / 2 + 1);
    p.V = 1 + rng.below(5);
    const Savings s = savings(p);
    const double pfl_exact = 1 - s.exact, pfl_approx = 1 - s.approximate;
    CHECK(std::abs(pfl_exact - pfl_approx) <= 0.01 * std::max(pfl_exact, pfl_approx));
  }
}

TEST_CASE("Eq. 10") {
  CHECK(round_time(TimeParams::uniform(1, {1, 1, 1, 1, 1, 1}, 1)) == 6.0);
  CHECK(round_time(TimeParams::uniform(3, {}, 0)) == 0.0);
  Rng rng(6);
  for (int k = 0; k < 100; ++k) {
    TimeParams tp;
    const std::size_t n = 1 + rng.below(5);
    for (std::size_t v = 0; v < n; ++v) {
      // Multiples of 1/64 keep every sum exact.
      auto d = [&] { return static_cast<double>(rng.below(256)) / 64.0; };
      tp.vehicles.push_back({d(), d(), d(), d(), d(), d()});
    }
    tp.t_s = static_cast<double>(rng.below(256)) / 64.0;
    double up = 0, down = 0;
    for (const auto& v : tp.vehicles) {
      up = std::max(up, v.tf_c + v.tu);
      down = std::max(down, std::max(v.tb_c, v.tf_p + v.tb_p) + v.td);
    }
    CHECK(round_time(tp) == up + tp.t_s + down);
    CHECK(simulate_round_time(tp) == round_time(tp));
  }
  TimeParams bad = TimeParams::uniform(1, {1, 1, 1, 1, -1, 1}, 0);
  CHECK_THROWS_AS(round_time(bad), ConfigError);
}

TEST_CASE("Eq. 11 linear total time") {
  const TimeParams tp = TimeParams::uniform(3, {0.5, 0.25, 0.125, 0.25, 1.0, 0.5}, 0.75);
  const double tb = round_time(tp);
  for (std::size_t n : {1u, 5u, 17u}) {
    const std::vector<double> rounds(n, tb);
    CHECK(total_time(rounds) == tb * static_cast<double>(n));
  }
}

TEST_CASE("space units") {
  CHECK(space_units(3, 4096).vehicle_side == 12288);
  CHECK(space_units(3, 4096).server_side == 12288);
  CHECK(space_units(6, 4096).vehicle_side == 2 * 12288);
}

TEST_CASE("sweep") {
  SweepGrid g;
  g.S_max = {100};
  g.N_b = {2, 4};
  g.B_s = {8, 200};
  g.F_b = {10};
  g.M_b = {1000};
  g.sigma = {2};
  g.V = {3};
  const auto rows = comm_sweep(g);
  REQUIRE(rows.size() == 2);  // B_s=200 > S_max is skipped
  CHECK(rows[0].m_pfl == 1440);
  CHECK(rows[1].m_fl == 12000);
  std::ostringstream out;
  write_sweep_csv(out, rows);
  const std::string csv = out.str();
  CHECK(csv.rfind("S_max,N_b,B_s,F_b,M_b,sigma,V,m_pfl,m_fl,eta_exact,eta_approx\n", 0) == 0);
  CHECK(csv.find("1440") != std::string::npos);
  CHECK(csv.find("12000") != std::string::npos);

  g.N_b = {1};
  g.B_s = {8};
  const auto undefined = comm_sweep(g);
  REQUIRE(undefined.size() == 1);
  CHECK_FALSE(undefined[0].eta_defined);
  std::ostringstream o2;
  write_sweep_csv(o2, undefined);
  CHECK(o2.str().find("nan") != std::string::npos);
}
