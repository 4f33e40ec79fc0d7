#pragma once

// Named property suites at fixed desk-scale resolutions.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "smflow/nls.hpp"
#include "smflow/scenario.hpp"

namespace smflow {

struct CheckReport {
  std::string suite;
  std::uint64_t seed = 0;
  std::vector<CheckItem> checks;
  bool pass() const { return all_pass(checks); }
};

inline Json to_json(const CheckReport& r) {
  Json checks = Json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  return Json{{"schema", kSchema}, {"suite", r.suite}, {"seed", r.seed}, {"checks", checks}, {"pass", r.pass()}};
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"conservation", "holonomy", "strichartz", "reduction", "all"};
  return names;
}

/// Unit-L2 torus data with standard normal coefficients on modes lo..hi.
inline std::vector<std::pair<int, cplx>> random_unit_modes(std::mt19937_64& rng, int lo, int hi) {
  std::normal_distribution<double> g;
  std::vector<std::pair<int, cplx>> m;
  double s = 0.0;
  for (int k = lo; k <= hi; ++k) {
    m.emplace_back(k, cplx(g(rng), g(rng)));
    s += std::norm(m.back().second);
  }
  for (auto& [k, c] : m) c /= std::sqrt(s);
  return m;
}

namespace detail {

inline void append_run_checks(std::vector<CheckItem>& out, const std::string& prefix, const RunResult& r,
                              const std::vector<std::string>& keep) {
  for (const auto& c : r.checks)
    if (std::find(keep.begin(), keep.end(), c.name) != keep.end())
      out.push_back({prefix + "." + c.name, c.value, c.threshold, c.pass});
}

inline std::vector<CheckItem> conservation_suite(std::uint64_t seed) {
  std::vector<CheckItem> out;
  {
    auto s = SurfaceModel::round_sphere();
    const auto grid = SpectralGrid::circle(32);
    const auto loop = constant_loop(s, grid);
    const auto end = advance(s, loop, stability_limit(grid), 100);
    out.push_back(check_le("constant_loop.energy_change", std::abs(energy(s, end) - energy(s, loop)), 1e-14));
    out.push_back(check_le("constant_loop.displacement", sup_distance(end, loop), 1e-14));
  }
  const std::vector<std::string> keep{"energy_drift", "a_l2_drift"};
  {
    RunConfig c;
    c.N = 64;
    c.T = 0.02;
    c.init = "perturbed_latitude(1.0, 0.15, 3)";
    append_run_checks(out, "round_sphere", simulate(c), keep);
  }
  {
    RunConfig c;
    c.target = {FactorConfig{"warped_sphere", 1.0, "bump(0.3,0.5,1.0)", 1.0}};
    c.N = 64;
    c.T = 0.02;
    c.init = "random_latitude(1.0, 0.1, 3)";
    c.seed = seed;
    append_run_checks(out, "warped_sphere", simulate(c), keep);
  }
  {
    RunConfig c;
    c.target = {FactorConfig{"hyperbolic_disk"}};
    c.N = 64;
    c.T = 0.02;
    c.init = "perturbed_latitude(1.0, 0.15, 2)";
    append_run_checks(out, "hyperbolic_disk", simulate(c), keep);
  }
  {
    auto s = SurfaceModel::round_sphere();
    const auto grid = SpectralGrid::circle(128);
    const auto loop = perturbed_latitude(s, grid, 1.0, 0.2, 2);
    const double dt = stability_limit(grid);
    const auto back = advance(s, advance(s, loop, dt, 100), -dt, 100);
    out.push_back(check_le("time_reversal", sup_distance(back, loop), 1e-9));
  }
  return out;
}

/// Latitudes swept from the equator to colatitude alpha at unit speed in t.
inline std::pair<std::vector<LoopState>, std::vector<Eigen::MatrixXd>> latitude_sweep(const SurfaceModel& s,
                                                                                       const SpectralGrid& grid,
                                                                                       double alpha, int m) {
  std::vector<LoopState> hist;
  std::vector<Eigen::MatrixXd> vel;
  for (int k = 0; k < m; ++k) {
    const double t = double(k) / (m - 1);
    const double a = kPi / 2 + t * (alpha - kPi / 2);
    LoopState l = latitude(s, grid, a);
    l.time = t;
    Eigen::MatrixXd v(3, grid.size());
    for (int j = 0; j < grid.size(); ++j) {
      const double ph = kTwoPi * grid.x(j);
      v.col(j) = (alpha - kPi / 2) * Vector3(std::cos(a) * std::cos(ph), std::cos(a) * std::sin(ph), -std::sin(a));
    }
    hist.push_back(std::move(l));
    vel.push_back(std::move(v));
  }
  return {hist, vel};
}

inline std::vector<CheckItem> holonomy_suite() {
  std::vector<CheckItem> out;
  auto s = SurfaceModel::round_sphere();
  for (auto [label, alpha] : {std::pair{"pi/6", kPi / 6}, {"pi/4", kPi / 4}, {"pi/3", kPi / 3}}) {
    const auto loop = latitude(s, SpectralGrid::circle(512), alpha);
    out.push_back(check_le(std::string("latitude_calibration.") + label,
                           std::abs(holonomy_ode(s, loop).theta - kTwoPi * (1 - std::cos(alpha))), 1e-6));
  }
  {
    const double alpha = kPi / 4;
    const auto [hist, vel] = latitude_sweep(s, SpectralGrid::circle(64), alpha, 201);
    const auto gb = holonomy_gauss_bonnet(s, hist, kTwoPi, &vel);
    out.push_back(check_le("gauss_bonnet_sweep", std::abs(gb.theta.back() - holonomy_ode(s, hist.back()).theta), 1e-4));
  }
  {
    RunConfig c;
    c.target = {FactorConfig{"warped_sphere", 1.0, "bump(0.3,0.5,1.0)", 1.0}};
    c.N = 32;
    c.T = 0.04;
    c.init = "perturbed_latitude(1.1, 0.1, 2)";
    append_run_checks(out, "warped_flow", simulate(c),
                      {"holonomy_gauss_bonnet_agreement", "holonomy_rate_agreement", "holonomy_unitarity"});
  }
  {
    const auto eq = great_circle(s, SpectralGrid::circle(128));
    std::vector<int> bases;
    for (int k = 0; k < 8; ++k) bases.push_back(16 * k);
    out.push_back(check_le("x_independence.equator", x_independence_check(s, eq, bases).spectral_deviation, 1e-8));
    SurfaceModel pair(std::vector<SurfaceFactor>{SurfaceFactor::round_sphere(),
                                                 SurfaceFactor::warped_sphere(WarpProfile::bump(0.3, 0.5, 1.0))});
    const auto grid = SpectralGrid::circle(128);
    Eigen::MatrixXd pts(6, grid.size());
    for (int j = 0; j < grid.size(); ++j) {
      const double x = grid.x(j);
      pts.block<3, 1>(0, j) = sphere_point(0.9 + 0.1 * std::sin(kTwoPi * x), kTwoPi * x);
      pts.block<3, 1>(3, j) = sphere_point(1.3 + 0.2 * std::cos(2 * kTwoPi * x), -kTwoPi * x);
    }
    const LoopState loop(grid, pts);
    const auto xi = x_independence_check(pair, loop, bases);
    out.push_back(check_le("x_independence.sphere_pair", xi.spectral_deviation, 1e-7));
    const MatrixXcd A = holonomy_matrix(pair, loop);
    out.push_back(check_le("product_integral.unitarity",
                           (A.adjoint() * A - MatrixXcd::Identity(2, 2)).norm(), 1e-10));
  }
  {
    auto w = SurfaceModel::warped_sphere(WarpProfile::bump(0.3, 0.5, 1.0));
    const auto loop = perturbed_latitude(w, SpectralGrid::circle(128), 1.0, 0.2, 2);
    out.push_back(check_le("product_integral.scalar_collapse",
                           std::abs(holonomy_matrix(w, loop)(0, 0) - std::polar(1.0, -holonomy_ode(w, loop).theta)),
                           1e-10));
  }
  return out;
}

inline std::vector<CheckItem> strichartz_suite(std::uint64_t seed) {
  std::vector<CheckItem> out;
  const auto grid = SpectralGrid::circle(64);
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k)
    worst = std::max(worst, strichartz_ratio(ComplexField::torus_modes(grid, random_unit_modes(rng, -16, 15))));
  out.push_back(check_le("random_ensemble.max_ratio", worst, std::sqrt(2.0) + 1e-9));
  double single = 0.0;
  for (int m : {0, 1, -7, 20})
    single = std::max(single, std::abs(strichartz_ratio(ComplexField::torus_modes(grid, {{m, 1.0}})) - 1.0));
  out.push_back(check_le("single_mode", single, 1e-10));
  const double h = 1.0 / std::sqrt(2.0);
  double two = 0.0;
  for (auto [a, b] : {std::pair{0, 1}, {-3, 5}, {2, 17}})
    two = std::max(two, std::abs(strichartz_ratio(ComplexField::torus_modes(grid, {{a, h}, {b, h}})) -
                                 std::pow(1.5, 0.25)));
  out.push_back(check_le("two_mode", two, 1e-6));
  return out;
}

inline std::vector<CheckItem> reduction_suite() {
  std::vector<CheckItem> out;
  {
    RunConfig c;
    c.N = 32;
    c.init = "great_circle";
    c.mode = "coupled";
    c.nls_dt = 1e-3;
    c.T = 0.1;
    c.checks.cross_error = 1e-6;
    c.checks.energy_drift = 1e-8;
    append_run_checks(out, "great_circle", simulate(c), {"cross_error", "energy_drift"});
  }
  RunConfig c;
  c.mode = "coupled";
  c.T = 0.05;
  c.init = "perturbed_latitude(1.0, 0.1, 2)";
  const auto table = convergence_study(c, {{64, 6.25e-3}, {128, 3.125e-3}, {256, 1.5625e-3}});
  out.push_back(check_ge("coupled_cross_error.order_1", table.rows[1].order, 1.8));
  out.push_back(check_ge("coupled_cross_error.order_2", table.rows[2].order, 1.8));
  c.N = 64;
  c.nls_dt = 6.25e-3;
  append_run_checks(out, "coupled", simulate(c), {"twist_residual", "periodicity_defect", "phi_l2_drift"});
  return out;
}

}  // namespace detail

/// Runs a named suite; unknown names raise UsageError.
inline CheckReport check_suite(const std::string& name, std::uint64_t seed = 0) {
  CheckReport r{name, seed, {}};
  auto add = [&](const std::string& prefix, const std::vector<CheckItem>& v) {
    for (auto c : v) {
      if (name == "all") c.name = prefix + "." + c.name;
      r.checks.push_back(std::move(c));
    }
  };
  const bool all = name == "all";
  if (std::find(suite_names().begin(), suite_names().end(), name) == suite_names().end())
    throw UsageError("unknown suite '" + name + "' (conservation, holonomy, strichartz, reduction, all)");
  if (all || name == "conservation") add("conservation", detail::conservation_suite(seed));
  if (all || name == "holonomy") add("holonomy", detail::holonomy_suite());
  if (all || name == "strichartz") add("strichartz", detail::strichartz_suite(seed));
  if (all || name == "reduction") add("reduction", detail::reduction_suite());
  return r;
}

}  // namespace smflow
