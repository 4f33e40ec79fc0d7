#include <gtest/gtest.h>

#include "smflow/holonomy.hpp"

using namespace smflow;

namespace {

// exp(M) by scaling and squaring of the Taylor series.
MatrixXcd expm_series(const MatrixXcd& m) {
  int s = 0;
  while (m.norm() / std::pow(2.0, s) > 0.25) ++s;
  const MatrixXcd a = m / std::pow(2.0, s);
  MatrixXcd term = MatrixXcd::Identity(m.rows(), m.cols()), sum = term;
  for (int k = 1; k < 30; ++k) {
    term = term * a / double(k);
    sum += term;
  }
  for (int k = 0; k < s; ++k) sum = sum * sum;
  return sum;
}

MatrixXcd anti_hermitian(int n, unsigned seed) {
  std::srand(seed);
  MatrixXcd m = MatrixXcd::Random(n, n);
  return 0.5 * (m - m.adjoint());
}

// Rotation angle psi of a transported vector, v1 = cos psi v0 + sin psi J v0.
double transport_angle(const SurfaceModel& s, const LoopState& loop) {
  SampledPath path{loop.points, std::nullopt, true, std::nullopt};
  const VectorX p = loop.points.col(0);
  const VectorX v0 = reference_frame(s, p).col(0);
  const VectorX v1 = parallel_transport(s, path, v0);
  return std::atan2(s.metric(p, v1, s.complex_structure(p, v0)), s.metric(p, v1, v0));
}

SurfaceModel warped() { return SurfaceModel::warped_sphere(WarpProfile::bump(0.3, 0.5, 1.0)); }

}  // namespace

TEST(HolonomyOde, LatitudeClosedForm) {
  for (double R : {1.0, 2.5}) {
    auto s = SurfaceModel::round_sphere(R);
    for (double alpha : {0.3, 1.0, kPi / 2, 2.4}) {
      auto loop = latitude(s, SpectralGrid::circle(64), alpha);
      EXPECT_NEAR(holonomy_ode(s, loop).theta, kTwoPi * (1 - std::cos(alpha)), 1e-10) << R << " " << alpha;
    }
  }
}

TEST(HolonomyOde, ConstantLoopAndFlatTorus) {
  auto s = SurfaceModel::round_sphere();
  EXPECT_EQ(holonomy_ode(s, constant_loop(s, SpectralGrid::circle(32))).theta, 0.0);
  auto t = SurfaceModel::flat_torus();
  const double th = holonomy_ode(t, great_circle(t, SpectralGrid::circle(32))).theta;
  EXPECT_NEAR(std::remainder(th, kTwoPi), 0.0, 1e-12);
}

TEST(HolonomyOde, HyperbolicCircleDeficit) {
  // Circle of Euclidean radius r in the Poincare disk: hyperbolic area
  // 4 pi r^2/(1 - r^2), K = -1, so theta = -area mod 2 pi.
  auto s = SurfaceModel::hyperbolic_disk();
  const double alpha = 1.0, r = 0.5 * std::sin(alpha);
  auto loop = latitude(s, SpectralGrid::circle(64), alpha);
  const double area = 4 * kPi * r * r / (1 - r * r);
  EXPECT_NEAR(std::remainder(holonomy_ode(s, loop).theta + area, kTwoPi), 0.0, 1e-9);
}

TEST(HolonomyOde, AgreesWithParallelTransport) {
  for (const auto& s : {SurfaceModel::round_sphere(), warped(), SurfaceModel::hyperbolic_disk()}) {
    auto loop = perturbed_latitude(s, SpectralGrid::circle(256), 0.9, 0.15, 3);
    const double th = holonomy_ode(s, loop).theta;
    EXPECT_NEAR(std::remainder(th - transport_angle(s, loop), kTwoPi), 0.0, 1e-7) << s.description();
  }
}

TEST(HolonomyRate, MatchesTimeDifference) {
  auto s = warped();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(32), 1.1, 0.1, 2);
  const double dt = 0.01 * stability_limit(loop.grid);
  auto plus = advance(s, loop, dt, 2), minus = advance(s, loop, -dt, 2);
  const double fd = (holonomy_ode(s, plus).theta - holonomy_ode(s, minus).theta) / (4 * dt);
  const double rate = holonomy_rate(s, loop);
  EXPECT_GT(std::abs(rate), 1e-2);
  EXPECT_NEAR(rate, fd, 1e-5 * std::max(1.0, std::abs(rate)));
}

TEST(HolonomyRate, VanishesForConstantCurvature) {
  auto s = SurfaceModel::round_sphere();
  EXPECT_EQ(holonomy_rate(s, perturbed_latitude(s, SpectralGrid::circle(32), 1.0, 0.2, 2)), 0.0);
}

TEST(GaussBonnet, TracksOdeLiftAlongFlow) {
  auto s = warped();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(32), 1.1, 0.1, 2);
  const double dt = 0.25 * stability_limit(loop.grid);
  std::vector<LoopState> hist{loop};
  for (int k = 0; k < 200; ++k) hist.push_back(step(s, hist.back(), dt));
  std::vector<Eigen::MatrixXd> vel;
  for (const auto& l : hist) vel.push_back(flow_rhs(s, l));
  const auto gb = holonomy_gauss_bonnet(s, hist, holonomy_ode(s, loop).theta, &vel);
  const auto gb_fd = holonomy_gauss_bonnet(s, hist, holonomy_ode(s, loop).theta);
  EXPECT_LE(std::abs(gb_fd.theta.back() - gb.theta.back()), 1e-3);
  double lift = holonomy_ode(s, loop).theta, worst = 0.0, drift = 0.0;
  for (size_t k = 1; k < hist.size(); ++k) {
    lift = continue_lift(lift, holonomy_ode(s, hist[k]).theta);
    worst = std::max(worst, std::abs(gb.theta[k] - lift));
    drift = std::max(drift, std::abs(lift - gb.theta[0]));
  }
  EXPECT_GT(drift, 1e-3);
  EXPECT_LE(worst, 1e-6);
  EXPECT_TRUE(gb.warnings.empty());
}

TEST(GaussBonnet, SweepFromEquator) {
  // Equator to latitude alpha along the sphere: theta changes by -2 pi cos(alpha).
  auto s = SurfaceModel::round_sphere();
  const auto grid = SpectralGrid::circle(64);
  const double alpha = 0.8;
  std::vector<LoopState> hist;
  std::vector<Eigen::MatrixXd> vel;
  const int m = 201;
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
    hist.push_back(l);
    vel.push_back(v);
  }
  const auto gb = holonomy_gauss_bonnet(s, hist, kTwoPi, &vel);
  EXPECT_NEAR(gb.theta.back() - kTwoPi, -kTwoPi * std::cos(alpha), 1e-4);
  EXPECT_NEAR(gb.theta.back(), kTwoPi * (1 - std::cos(alpha)), 1e-4);
}

TEST(ProductIntegral, ConstantGenerator) {
  for (int n : {1, 2, 3}) {
    const MatrixXcd B = 3.0 * anti_hermitian(n, 7 + n);
    const MatrixXcd P = product_integral(std::vector<MatrixXcd>(16, B));
    EXPECT_LE((P - expm_series(-B)).norm(), 1e-12) << n;
  }
}

TEST(ProductIntegral, GaugeTransformedNonCommuting) {
  const MatrixXcd B = 2.0 * anti_hermitian(3, 11), X = 1.5 * anti_hermitian(3, 12);
  ASSERT_GT((B * X - X * B).norm(), 1.0);
  for (int N : {128, 256}) {
    std::vector<MatrixXcd> samples(N);
    for (int j = 0; j < N; ++j) {
      const double x = double(j) / N;
      const MatrixXcd G = expm_series(std::sin(kTwoPi * x) * X);
      samples[j] = G.inverse() * B * G + kTwoPi * std::cos(kTwoPi * x) * X;
    }
    const MatrixXcd P = product_integral(samples);
    EXPECT_LE((P - expm_series(-B)).norm(), N == 128 ? 1e-6 : 1e-8) << N;
    EXPECT_LE((P.adjoint() * P - MatrixXcd::Identity(3, 3)).norm(), 1e-13);
  }
}

TEST(ProductIntegral, RejectsNonAntiHermitian) {
  std::vector<MatrixXcd> samples(8, MatrixXcd::Identity(2, 2));
  EXPECT_THROW(product_integral(samples), DomainError);
}

TEST(ProductIntegral, ScalarCaseMatchesOde) {
  auto s = warped();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(128), 1.0, 0.2, 2);
  const cplx a = holonomy_matrix(s, loop)(0, 0);
  EXPECT_NEAR(std::abs(a - std::polar(1.0, -holonomy_ode(s, loop).theta)), 0.0, 1e-10);
}

TEST(XIndependence, ProductOfSpheres) {
  SurfaceModel s(std::vector<SurfaceFactor>{SurfaceFactor::round_sphere(), warped().factor(0)});
  const auto grid = SpectralGrid::circle(128);
  Eigen::MatrixXd pts(6, grid.size());
  for (int j = 0; j < grid.size(); ++j) {
    const double x = grid.x(j);
    pts.block<3, 1>(0, j) = sphere_point(0.9 + 0.1 * std::sin(kTwoPi * x), kTwoPi * x);
    pts.block<3, 1>(3, j) = sphere_point(1.3 + 0.2 * std::cos(2 * kTwoPi * x), -kTwoPi * x);
  }
  LoopState loop(grid, pts);
  const auto xi = x_independence_check(s, loop, {0, 16, 32, 48, 64, 80, 96, 112});
  EXPECT_LE(xi.spectral_deviation, 1e-8);
  EXPECT_LE(xi.matrix_deviation, 1e-8);
  // Diagonal frame field: the eigenphases are the factor holonomies.
  const auto ph = eigenphases(holonomy_matrix(s, loop));
  std::vector<double> expect;
  for (int f = 0; f < 2; ++f) {
    SurfaceModel single(s.factor(f));
    LoopState l(grid, pts.middleRows(3 * f, 3));
    expect.push_back(std::remainder(-holonomy_ode(single, l).theta, kTwoPi));
  }
  std::sort(expect.begin(), expect.end());
  ASSERT_EQ(ph.size(), 2u);
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(ph[k], expect[k], 1e-9);
}

TEST(Eigenphases, TrackingIsContinuous) {
  // Two eigenphases moving linearly, crossing and wrapping. Tracking must move
  // each lift by at most the true per-step change and keep their sum exact.
  const MatrixXcd u = expm_series(anti_hermitian(2, 3));
  std::vector<double> prev;
  for (int k = 0; k <= 100; ++k) {
    const double a = 0.1 * k, b = -0.07 * k + 1.0;
    MatrixXcd d = MatrixXcd::Zero(2, 2);
    d(0, 0) = std::polar(1.0, a);
    d(1, 1) = std::polar(1.0, b);
    const auto next = track_eigenphases(prev, u * d * u.adjoint());
    if (!prev.empty()) {
      for (int i = 0; i < 2; ++i) EXPECT_LE(std::abs(next[i] - prev[i]), 0.1 + 1e-9) << k;
    }
    EXPECT_NEAR(next[0] + next[1], a + b, 1e-9) << k;
    prev = next;
  }
}
