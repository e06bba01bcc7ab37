#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <vector>

#include "gharnack/hjb.hpp"
#include "oracles.hpp"

using namespace gharnack;

namespace {

const GParams kBand(1.0, 2.0);

HamiltonianSystem free_system(const Box& box) {
  return HamiltonianSystem(0.0, 1.0, 1.0, parse_drift("0", box),
                           parse_drift("0", box), 1.0);
}

}  // namespace

TEST_CASE("constant terminal data is preserved exactly") {
  Box box = Box::square(4.0);
  HamiltonianSystem system = free_system(box);
  std::size_t steps = hjb_suggest_steps(system, kBand, 0.5, box, 21, 21);
  auto sol = solve_hjb(
      system, kBand, [](double, double) { return 7.0; }, 0.5, box, 21, 21,
      steps);
  for (double v : sol.u0) CHECK(v == 7.0);
  // The zero second difference ties to the upper branch everywhere.
  std::size_t bits_set = 0;
  for (auto w : sol.policy->bits) bits_set += std::popcount(w);
  CHECK(bits_set == steps * 21 * 21);
}

TEST_CASE("worst-case heat value matches the one-dimensional reference") {
  Box box = Box::square(8.0);
  HamiltonianSystem system = free_system(box);
  const std::size_t n = 201;
  std::size_t steps = hjb_suggest_steps(system, kBand, 1.0, box, n, n);

  auto clip = solve_hjb(
      system, kBand, [](double, double y) { return std::min(y * y, 25.0); },
      1.0, box, n, n, steps);
  const double v = hjb_value_at(clip, {0.0, 0.0});
  CHECK(v == Catch::Approx(oracle::gheat_clip25_value).margin(2e-3));
  // Within two percent of the unclipped worst-case second moment.
  CHECK(v >= 0.98 * 4.0);
  CHECK(v <= 4.0);

  auto neg = solve_hjb(
      system, kBand, [](double, double y) { return std::max(-y * y, -25.0); },
      1.0, box, n, n, steps);
  const double w = hjb_value_at(neg, {0.0, 0.0});
  CHECK(w == Catch::Approx(oracle::gheat_negclip_value).margin(2e-3));
  CHECK(std::abs(w - (-1.0)) <= 0.02);

  // Terminal data and coefficients depend only on y, so every x column
  // performs identical arithmetic and u is exactly x-independent.
  for (std::size_t i = 1; i < n; ++i) {
    CHECK(std::memcmp(clip.u0.data(), clip.u0.data() + i * n,
                      n * sizeof(double)) == 0);
  }
}

TEST_CASE("monte carlo dictionary values stay below the solved sup") {
  Box box = Box::square(8.0);
  HamiltonianSystem system = free_system(box);
  const std::size_t n = 201;
  std::size_t steps = hjb_suggest_steps(system, kBand, 1.0, box, n, n);
  auto sol = solve_hjb(
      system, kBand, [](double, double y) { return std::min(y * y, 25.0); },
      1.0, box, n, n, steps);
  const double u = hjb_value_at(sol, {0.0, 0.0});

  TimeGrid grid(1.0, 128);
  std::vector<ControlPolicy> dict;
  dict.push_back(make_policy(1.0, kBand, grid, "sigma_lo"));
  dict.push_back(make_policy(2.0, kBand, grid, "sigma_hi"));
  auto mc = semigroup_sup(
      system, dict, [](double, double y) { return std::min(y * y, 25.0); },
      {0.0, 0.0}, grid, 40000, 99);
  double se = 0.0;
  for (const auto& e : mc.per_control) se = std::max(se, e.se);
  CHECK(mc.value <= u + 3.0 * se + 0.01);
  // The constant upper edge is nearly optimal here, so the dictionary
  // value is also not far below the sup.
  CHECK(mc.value >= u - 3.0 * se - 0.06);
}

TEST_CASE("the scheme is monotone in the terminal data") {
  Box box = Box::square(4.0);
  HamiltonianSystem system(0.0, 1.0, 1.0, parse_drift("-0.5 * y", box),
                           parse_drift("0.2", box), 1.0);
  const std::size_t n = 61;
  std::size_t steps = hjb_suggest_steps(system, kBand, 0.5, box, n, n);
  auto lo = solve_hjb(
      system, kBand, [](double, double y) { return std::sin(y); }, 0.5, box,
      n, n, steps);
  auto hi = solve_hjb(
      system, kBand,
      [](double x, double y) { return std::sin(y) + 0.2 + 0.1 * std::tanh(x); },
      0.5, box, n, n, steps);
  for (std::size_t idx = 0; idx < lo.u0.size(); ++idx) {
    CHECK(lo.u0[idx] <= hi.u0[idx] + 1e-7);
  }
}

TEST_CASE("extracted feedback control attains the solved value") {
  Box box = Box::square(6.0);
  HamiltonianSystem system = free_system(box);
  const std::size_t n = 81;
  std::size_t steps = hjb_suggest_steps(system, kBand, 0.5, box, n, n);
  auto sol = solve_hjb(
      system, kBand, [](double, double y) { return std::tanh(y + 0.3); }, 0.5,
      box, n, n, steps);
  const double u = hjb_value_at(sol, {0.0, 0.0});

  TimeGrid grid(0.5, steps);
  auto fb = extract_policy(sol);
  auto f = [](double, double y) { return std::tanh(y + 0.3); };
  auto mc_fb = mc_expectation(system, fb, f, {0.0, 0.0}, grid, 40000, 17);
  CHECK(std::abs(mc_fb.mean - u) <= 3.0 * mc_fb.se + 0.02);

  // No constant control does better than the feedback rule (up to noise
  // and discretisation).
  for (double sigma : {1.0, 2.0}) {
    auto mc_c = mc_expectation(system, make_policy(sigma, kBand, grid), f,
                               {0.0, 0.0}, grid, 40000, 17);
    CHECK(mc_fb.mean + 3.0 * (mc_fb.se + mc_c.se) + 0.02 >= mc_c.mean);
  }
}

TEST_CASE("solves are bit-identical across repeats") {
  Box box = Box::square(5.0);
  HamiltonianSystem system(0.0, 1.0, 1.0, parse_drift("-y", box),
                           parse_drift("0.1 * y", box), 1.0);
  const std::size_t n = 41;
  std::size_t steps = hjb_suggest_steps(system, kBand, 0.4, box, n, n);
  auto f = [](double x, double y) { return std::sin(x) * std::cos(y); };
  auto a = solve_hjb(system, kBand, f, 0.4, box, n, n, steps);
  auto b = solve_hjb(system, kBand, f, 0.4, box, n, n, steps);
  REQUIRE(a.u0.size() == b.u0.size());
  CHECK(std::memcmp(a.u0.data(), b.u0.data(),
                    a.u0.size() * sizeof(double)) == 0);
  REQUIRE(a.policy->bits.size() == b.policy->bits.size());
  CHECK(std::memcmp(a.policy->bits.data(), b.policy->bits.data(),
                    a.policy->bits.size() * sizeof(std::uint64_t)) == 0);
}

TEST_CASE("time step validation names the cure") {
  Box box = Box::square(4.0);
  HamiltonianSystem system = free_system(box);
  try {
    solve_hjb(
        system, kBand, [](double, double y) { return y; }, 1.0, box, 31, 31,
        1);
    FAIL("expected a step-size rejection");
  } catch (const CflViolationError& e) {
    CHECK(std::string(e.what()).find("raise n_steps") != std::string::npos);
    CHECK(e.dt_limit > 0.0);
    CHECK(e.dt_limit < 1.0);
  }
  CHECK_THROWS_AS(solve_hjb(
                      system, kBand, [](double, double) { return 0.0; }, 1.0,
                      box, 2, 31, 100),
                  Error);
}

TEST_CASE("interpolation is nodal-exact and bilinear") {
  Box box = Box::square(2.0);
  HamiltonianSystem system = free_system(box);
  const std::size_t n = 17;
  std::size_t steps = hjb_suggest_steps(system, kBand, 0.25, box, n, n);
  auto sol = solve_hjb(
      system, kBand, [](double x, double y) { return x + 2 * y * y; }, 0.25,
      box, n, n, steps);

  for (std::size_t i : {std::size_t{0}, std::size_t{8}, std::size_t{16}}) {
    for (std::size_t j : {std::size_t{3}, std::size_t{8}, std::size_t{12}}) {
      CHECK(hjb_value_at(sol, {sol.node_x(i), sol.node_y(j)}) ==
            Catch::Approx(sol.u0[i * n + j]).epsilon(1e-14).margin(1e-14));
    }
  }
  // Cell-centre value is the average of the four corners.
  const double mx = 0.5 * (sol.node_x(4) + sol.node_x(5));
  const double my = 0.5 * (sol.node_y(9) + sol.node_y(10));
  const double corners = 0.25 * (sol.u0[4 * n + 9] + sol.u0[4 * n + 10] +
                                 sol.u0[5 * n + 9] + sol.u0[5 * n + 10]);
  CHECK(hjb_value_at(sol, {mx, my}) ==
        Catch::Approx(corners).epsilon(1e-13).margin(1e-13));

  CHECK_THROWS_AS(hjb_value_at(sol, {5.0, 0.0}), OutOfDomainError);
  CHECK_THROWS_AS(hjb_value_at(sol, {0.0, -2.5}), OutOfDomainError);
}

TEST_CASE("suggested step counts satisfy the stability bound") {
  Box box = Box::square(8.0);
  HamiltonianSystem system(0.3, 1.5, 0.8, parse_drift("-x - y", box),
                           parse_drift("0.5 * y", box), 3.0);
  for (std::size_t n : {21, 51, 101}) {
    std::size_t steps = hjb_suggest_steps(system, kBand, 2.0, box, n, n);
    CHECK_NOTHROW(solve_hjb(
        system, kBand, [](double, double y) { return std::tanh(y); }, 2.0,
        box, n, n, steps));
    if (steps > 1) {
      CHECK_THROWS_AS(solve_hjb(
                          system, kBand,
                          [](double, double y) { return std::tanh(y); }, 2.0,
                          box, n, n, steps / 8),
                      CflViolationError);
    }
  }
}
