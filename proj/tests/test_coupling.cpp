#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gharnack/coupling.hpp"
#include "gharnack/stats.hpp"
#include "oracles.hpp"

using namespace gharnack;

namespace {

const GParams kBand(1.0, 2.0);
const Box kBox = Box::square(5.0);

HamiltonianSystem zero_drift_system(double A, double M, double Q) {
  return HamiltonianSystem(A, M, Q, parse_drift("0", kBox),
                           parse_drift("0", kBox), 1.0);
}

}  // namespace

TEST_CASE("quadratic-cost aggregate has the frozen unit values") {
  CHECK(sigma_T(1.0, kBand) == oracle::sigma_t1);
  CHECK(sigma_T(2.0, kBand) == oracle::sigma_t2);
  CHECK_THROWS_AS(sigma_T(0.0, kBand), Error);
  CHECK_THROWS_AS(sigma_T(-1.0, kBand), Error);
}

TEST_CASE("quadratic-cost aggregate blows up like T^-3 for small T") {
  std::vector<double> log_t, log_s;
  for (int i = 0; i < 25; ++i) {
    const double t = std::pow(10.0, -3.0 + 2.0 * i / 24.0);
    log_t.push_back(std::log(t));
    log_s.push_back(std::log(sigma_T(t, kBand)));
  }
  auto [intercept, slope] = fit_line(log_t, log_s);
  (void)intercept;
  CHECK(slope == Catch::Approx(oracle::sigma_small_t_slope).margin(1e-9));
  CHECK(slope >= -3.05);
  CHECK(slope <= -2.95);
}

TEST_CASE("coupling weight integral") {
  CHECK(lambda1(0.0, 1.0, 1.0) ==
        Catch::Approx(oracle::lambda1_a0_m1_t1).epsilon(1e-15));
  CHECK(lambda1(0.0, 2.0, 2.0) ==
        Catch::Approx(oracle::lambda1_a0_m2_t2).epsilon(1e-15));
  // Damping shrinks the weight; anti-damping grows it.
  CHECK(lambda1(1.0, 1.0, 1.0) < lambda1(0.0, 1.0, 1.0));
  CHECK(lambda1(-1.0, 1.0, 1.0) > lambda1(0.0, 1.0, 1.0));
  CHECK_THROWS_AS(lambda1(0.0, 0.0, 1.0), DegenerateCouplingError);
  CHECK_THROWS_AS(lambda1(0.0, 1.0, 0.0), Error);

  // Pointwise integrand bounds give exact one-sided controls.
  for (double A : {0.5, 2.0}) {
    for (double T : {0.5, 1.0, 3.0}) {
      CHECK(lambda1(A, 1.0, T) >=
            std::exp(-2.0 * A * T) * T / 6.0 - 1e-12);
      CHECK(lambda1(-A, 1.0, T) >= T / 6.0 - 1e-12);
    }
  }
}

TEST_CASE("schedule matches the closed forms at A = 0") {
  TimeGrid grid(1.0, 512);

  CouplingSchedule s10 = build_schedule(0.0, 1.0, 1.0, {1.0, 0.0}, grid);
  CHECK(s10.theta1_x[0] == 1.0);
  CHECK(s10.gamma1[0] == 0.0);
  for (std::size_t k = 0; k <= 512; ++k) {
    const double t = grid.time(k);
    CHECK(s10.gamma1[k] ==
          Catch::Approx(-6.0 * t * (1.0 - t)).margin(1e-10));
    CHECK(s10.theta1_x[k] ==
          Catch::Approx(1.0 - 3.0 * t * t + 2.0 * t * t * t).margin(1e-10));
  }
  CHECK(s10.theta1_x[256] == Catch::Approx(oracle::theta1_mid_x_h10).margin(1e-10));
  CHECK(s10.gamma1[256] == Catch::Approx(oracle::theta1_mid_y_h10).margin(1e-10));
  CHECK(s10.gamma1[512] == 0.0);
  CHECK(std::abs(s10.theta1_x[512]) <= 1e-8);

  CouplingSchedule s01 = build_schedule(0.0, 1.0, 1.0, {0.0, 1.0}, grid);
  CHECK(s01.theta1_x[0] == 0.0);
  CHECK(s01.gamma1[0] == 1.0);
  for (std::size_t k = 0; k <= 512; ++k) {
    const double t = grid.time(k);
    CHECK(s01.gamma1[k] ==
          Catch::Approx((1.0 - t) * (1.0 - 3.0 * t)).margin(1e-10));
    CHECK(s01.theta1_x[k] ==
          Catch::Approx(t * (1.0 - t) * (1.0 - t)).margin(1e-10));
  }
  CHECK(s01.theta1_x[256] == Catch::Approx(oracle::theta1_mid_x_h01).margin(1e-10));
  CHECK(s01.gamma1[512] == 0.0);
  CHECK(std::abs(s01.theta1_x[512]) <= 1e-8);
}

TEST_CASE("schedule endpoints close for general coefficients") {
  // The whole point of the construction: start exactly at h, land exactly
  // at zero. The landing tolerance is relative to |h|.
  for (double A : {-2.0, -0.5, 0.0, 1.0, 2.0}) {
    for (double M : {-2.0, -1.0, 1.0, 2.0}) {
      for (double T : {0.1, 1.0, 4.0}) {
        TimeGrid grid(T, 512);
        for (std::array<double, 2> h :
             {std::array<double, 2>{1.0, 0.0}, std::array<double, 2>{0.0, 1.0},
              std::array<double, 2>{1.5, -0.5}}) {
          CouplingSchedule s = build_schedule(A, M, T, h, grid);
          const double h_norm = std::hypot(h[0], h[1]);
          CHECK(s.theta1_x[0] == h[0]);
          CHECK(s.gamma1[0] == h[1]);
          CHECK(s.gamma1[512] == 0.0);
          CHECK(std::abs(s.theta1_x[512]) <= 1e-8 * h_norm);
        }
      }
    }
  }
  TimeGrid grid(1.0, 16);
  CHECK_THROWS_AS(build_schedule(0.0, 1.0, 2.0, {1.0, 0.0}, grid), Error);
}

TEST_CASE("coupled paths track the deterministic offset exactly") {
  const double A = 0.3, M = 1.2, Q = 0.8, T = 1.0;
  HamiltonianSystem system(A, M, Q, parse_drift("-x - y", kBox),
                           parse_drift("0.1 * y", kBox), 2.0);
  TimeGrid grid(T, 1024);
  const std::array<double, 2> h{0.4, -0.7};
  CouplingSchedule sched = build_schedule(A, M, T, h, grid);
  auto [ox, oy] = discrete_offsets(sched, grid);

  auto policy = alternating_policy(kBand, grid);
  DrivingPath driving = sample_driving(policy, grid, 2718);
  CoupledPaths paths = coupled_simulate(system, driving, {0.2, 0.1}, sched,
                                        grid);
  const double h_norm = std::hypot(h[0], h[1]);
  double worst = 0.0;
  for (std::size_t k = 0; k <= 1024; ++k) {
    worst = std::max(worst, std::abs(paths.shifted.x[k] - paths.base.x[k] -
                                     ox[k]));
    worst = std::max(worst, std::abs(paths.shifted.y[k] - paths.base.y[k] -
                                     oy[k]));
  }
  CHECK(worst <= 1e-12 * h_norm);

  // Endpoint shrinks at first order in dt (the offset ODE is Euler).
  std::vector<double> log_dt, log_gap;
  for (std::size_t n : {64, 128, 256, 512, 1024}) {
    TimeGrid g(T, n);
    CouplingSchedule s = build_schedule(A, M, T, h, g);
    auto [gx, gy] = discrete_offsets(s, g);
    log_dt.push_back(std::log(g.dt()));
    log_gap.push_back(std::log(std::hypot(gx.back(), gy.back())));
  }
  auto [c, slope] = fit_line(log_dt, log_gap);
  (void)c;
  INFO("offset endpoint order " << slope);
  CHECK(slope >= 0.9);
}

TEST_CASE("girsanov density of the null drift is one") {
  TimeGrid grid(1.0, 64);
  DrivingPath driving = sample_driving(make_policy(2.0, kBand, grid), grid, 5);
  std::vector<double> zero(64, 0.0);
  DensityPath d = girsanov_exponent(zero, zero, driving, grid, 1.0);
  for (double r : d.density) CHECK(r == 1.0);
  CHECK(d.integral.back() == 0.0);
  CHECK(d.quadratic.back() == 0.0);
}

TEST_CASE("girsanov densities have unit mean in every channel") {
  const double T = 1.0;
  const std::size_t n = 256, n_paths = 20000;
  TimeGrid grid(T, n);
  HamiltonianSystem system(0.0, 1.0, 1.0, parse_drift("-y", kBox),
                           parse_drift("0", kBox), 1.0);
  CouplingSchedule sched = build_schedule(0.0, 1.0, T, {0.5, -0.5}, grid);
  auto policy = alternating_policy(kBand, grid);

  std::vector<double> g1(n), g2(n);
  for (std::size_t k = 0; k < n; ++k) {
    g1[k] = std::sin(3.0 * grid.time(k));
    g2[k] = 0.25 * std::cos(grid.time(k));
  }
  std::vector<double> zero(n, 0.0);

  RunningStat first, second, phi;
  for (std::size_t i = 0; i < n_paths; ++i) {
    DrivingPath driving = sample_driving(policy, grid, derive_stream(88, i));
    first.add(girsanov_exponent(g1, zero, driving, grid, 1.0).density.back());
    second.add(girsanov_exponent(zero, g2, driving, grid, 1.0).density.back());
    CoupledPaths paths =
        coupled_simulate(system, driving, {0.0, 0.0}, sched, grid);
    phi.add(girsanov_exponent(paths.phi1, paths.phi2, driving, grid, 1.0)
                .density.back());
  }
  CHECK(std::abs(first.mean() - 1.0) <= 3.0 * first.standard_error());
  CHECK(std::abs(second.mean() - 1.0) <= 3.0 * second.standard_error());
  CHECK(std::abs(phi.mean() - 1.0) <= 3.0 * phi.standard_error());
}

TEST_CASE("tilted exponent is the pathwise power of the density") {
  const std::size_t n = 128;
  TimeGrid grid(0.5, n);
  auto policy = alternating_policy(kBand, grid);
  std::vector<double> g1(n), g2(n);
  for (std::size_t k = 0; k < n; ++k) {
    g1[k] = 0.7 * std::sin(grid.time(k) * 5.0);
    g2[k] = -0.4 + 0.1 * grid.time(k);
  }
  for (double q : {1.5, 2.0, 4.0}) {
    for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
      DrivingPath driving = sample_driving(policy, grid, seed);
      DensityPath base = girsanov_exponent(g1, g2, driving, grid, 1.0);
      DensityPath tilted = girsanov_exponent(g1, g2, driving, grid, q);
      const double sq = base.quadratic.back();
      const double expected = std::pow(base.density.back(), q) *
                              std::exp(-0.5 * (q * q - q) * sq);
      CHECK(tilted.density.back() ==
            Catch::Approx(expected).epsilon(1e-10));
    }
  }
}

TEST_CASE("girsanov input validation") {
  TimeGrid grid(1.0, 16);
  DrivingPath driving = sample_driving(make_policy(1.0, kBand, grid), grid, 3);
  std::vector<double> g(16, 0.0), short_g(8, 0.0);
  CHECK_THROWS_AS(girsanov_exponent(g, g, driving, grid, 0.5), Error);
  CHECK_THROWS_AS(girsanov_exponent(short_g, g, driving, grid, 1.0), Error);
  TimeGrid other(1.0, 32);
  CHECK_THROWS_AS(girsanov_exponent(g, g, driving, other, 1.0), Error);
}

TEST_CASE("correction energy of the canonical pair is the frozen form") {
  // Zero state drifts: phi2 = 0 and phi1 = gamma1' / Q. Under the constant
  // lower control the discrete energy is 12 + 24/n^2 exactly for
  // A=0, M=Q=1, T=1, h=(1,0).
  HamiltonianSystem system = zero_drift_system(0.0, 1.0, 1.0);
  for (std::size_t n : {std::size_t{256}, std::size_t{65536}}) {
    TimeGrid grid(1.0, n);
    CouplingSchedule sched = build_schedule(0.0, 1.0, 1.0, {1.0, 0.0}, grid);
    DrivingPath driving =
        sample_driving(make_policy(1.0, kBand, grid), grid, 99);
    CoupledPaths paths =
        coupled_simulate(system, driving, {0.0, 0.0}, sched, grid);
    for (std::size_t k = 0; k < n; ++k) CHECK(paths.phi2[k] == 0.0);
    PhiQuadratic q = phi_quadratic_form(paths, grid, kBand);
    const double nn = static_cast<double>(n);
    CHECK(q.value ==
          Catch::Approx(12.0 + 24.0 / (nn * nn)).margin(1e-10));
    // The energy sits well inside the Sigma(T)|h|^2 budget.
    CHECK(q.ratio == Catch::Approx(q.value / 32.0).epsilon(1e-12));
    CHECK(q.ratio <= 1.0);
  }
}

TEST_CASE("correction energy tracks the quadratic budget up to a constant") {
  // The budget comparison holds with an empirical constant, not with
  // constant one: a pure position shift at short horizon needs steering
  // energy ~ 12 h1^2 / T^3 against a budget whose leading term is T^-3
  // with unit prefactor. The constant is fitted and must stay finite and
  // moderate over a grid of horizons and shifts.
  HamiltonianSystem system = zero_drift_system(0.0, 1.0, 1.0);
  double max_ratio = 0.0;
  for (double T : {0.5, 1.0, 2.0}) {
    TimeGrid grid(T, 512);
    for (std::array<double, 2> h :
         {std::array<double, 2>{1.0, 0.0}, std::array<double, 2>{0.0, 1.0},
          std::array<double, 2>{-0.3, 0.8}}) {
      CouplingSchedule sched = build_schedule(0.0, 1.0, T, h, grid);
      for (double sigma : {1.0, 2.0}) {
        DrivingPath driving =
            sample_driving(make_policy(sigma, kBand, grid), grid, 7);
        CoupledPaths paths =
            coupled_simulate(system, driving, {0.0, 0.0}, sched, grid);
        PhiQuadratic q = phi_quadratic_form(paths, grid, kBand);
        REQUIRE(std::isfinite(q.ratio));
        CHECK(q.value >= 0.0);
        max_ratio = std::max(max_ratio, q.ratio);
      }
    }
  }
  INFO("fitted budget constant " << max_ratio);
  CHECK(max_ratio > 0.0);
  CHECK(max_ratio < 10.0);
  // At unit horizon and beyond, the budget dominates outright.
  {
    TimeGrid grid(1.0, 512);
    CouplingSchedule sched = build_schedule(0.0, 1.0, 1.0, {1.0, 0.0}, grid);
    DrivingPath driving =
        sample_driving(make_policy(1.0, kBand, grid), grid, 7);
    CoupledPaths paths =
        coupled_simulate(system, driving, {0.0, 0.0}, sched, grid);
    CHECK(phi_quadratic_form(paths, grid, kBand).ratio <= 1.0);
  }
}

TEST_CASE("novikov moment of the null drift is exactly one") {
  HamiltonianSystem system = zero_drift_system(0.0, 1.0, 1.0);
  TimeGrid grid(1.0, 32);
  std::vector<ControlPolicy> dict;
  dict.push_back(make_policy(1.0, kBand, grid, "sigma_lo"));
  dict.push_back(make_policy(2.0, kBand, grid, "sigma_hi"));
  auto zero = [](double, double) { return 0.0; };
  NovikovEstimate est =
      novikov_estimate(zero, zero, system, dict, 0.1, grid, 50, 4);
  CHECK(est.value == 1.0);
  CHECK(est.max_exponent == 0.0);
  for (const auto& e : est.per_control) {
    CHECK(e.mean == 1.0);
    CHECK(e.se == 0.0);
  }
}

TEST_CASE("novikov moment of a constant drift is deterministic") {
  HamiltonianSystem system = zero_drift_system(0.0, 1.0, 1.0);
  const double T = 2.0, c = 0.8, delta = 0.25;
  TimeGrid grid(T, 64);
  std::vector<ControlPolicy> dict;
  dict.push_back(make_policy(1.0, kBand, grid, "sigma_lo"));
  dict.push_back(make_policy(2.0, kBand, grid, "sigma_hi"));
  auto g1 = [&](double, double) { return c; };
  auto g2 = [](double, double) { return 0.0; };
  NovikovEstimate est =
      novikov_estimate(g1, g2, system, dict, delta, grid, 100, 4);
  // Exponent (1/2+delta) c^2 T / sigma^2 is largest at the lower edge.
  const double expected = std::exp((0.5 + delta) * c * c * T);
  CHECK(est.value == Catch::Approx(expected).epsilon(1e-12));
  CHECK(est.max_exponent ==
        Catch::Approx((0.5 + delta) * c * c * T).epsilon(1e-12));
  for (const auto& e : est.per_control) CHECK(e.se <= 1e-15);
}

TEST_CASE("novikov moment flags exponents that would overflow") {
  HamiltonianSystem system = zero_drift_system(0.0, 1.0, 1.0);
  TimeGrid grid(8.0, 64);
  std::vector<ControlPolicy> dict;
  dict.push_back(make_policy(1.0, kBand, grid, "sigma_lo"));
  auto g1 = [](double, double) { return 30.0; };
  auto g2 = [](double, double) { return 0.0; };
  try {
    novikov_estimate(g1, g2, system, dict, 0.1, grid, 10, 4);
    FAIL("expected an overflow diagnostic");
  } catch (const OverflowDetectedError& e) {
    CHECK(e.exponent > 700.0);
    CHECK(std::string(e.what()).find("sigma_lo") != std::string::npos);
  }
  CHECK_THROWS_AS(novikov_estimate(g2, g2, system, dict, 0.0, grid, 10, 4),
                  Error);
}

TEST_CASE("bounded state-dependent drifts keep the moment finite") {
  HamiltonianSystem system(0.0, 1.0, 1.0, parse_drift("-y", kBox),
                           parse_drift("0", kBox), 1.0);
  TimeGrid grid(1.0, 64);
  std::vector<ControlPolicy> dict;
  dict.push_back(make_policy(1.0, kBand, grid, "sigma_lo"));
  dict.push_back(make_policy(2.0, kBand, grid, "sigma_hi"));
  auto g1 = [](double x, double) { return std::sin(x); };
  auto g2 = [](double, double) { return 0.0; };
  NovikovEstimate est =
      novikov_estimate(g1, g2, system, dict, 0.1, grid, 2000, 4);
  CHECK(est.value >= 1.0);
  CHECK(est.max_exponent <= 0.6 * 1.0 + 1e-12);
  CHECK(est.value <= std::exp(0.6));
}
