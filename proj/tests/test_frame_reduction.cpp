#include <gtest/gtest.h>

#include "smflow/frame_reduction.hpp"

using namespace smflow;

namespace {

SurfaceModel warped() { return SurfaceModel::warped_sphere(WarpProfile::bump(0.3, 0.5, 1.0)); }

SurfaceModel two_spheres() {
  return SurfaceModel(std::vector<SurfaceFactor>{SurfaceFactor::round_sphere(), SurfaceFactor::round_sphere(1.5)});
}

LoopState product_pulse(const SurfaceModel& s, int N) {
  const auto grid = SpectralGrid::line(N, 8.0);
  Eigen::MatrixXd pts(6, N);
  for (int j = 0; j < N; ++j) {
    const double x = grid.x(j);
    pts.block<3, 1>(0, j) = sphere_point(0.6 * std::exp(-x * x), x);
    pts.block<3, 1>(3, j) = 1.5 * sphere_point(0.5 * std::exp(-(x - 0.5) * (x - 0.5) / 1.5), -0.7 * x);
  }
  (void)s;
  return LoopState(grid, pts);
}

struct Reduced {
  FrameField frame;
  FrameCoefficients coeffs;
};

Reduced reduce(const SurfaceModel& s, const LoopState& loop, const Eigen::MatrixXd& seed, int base = 0) {
  Reduced r{parallel_frame(s, loop, seed, base), {}};
  r.coeffs = coefficients(s, loop, r.frame);
  return r;
}

// Frames at t + k*dt (k = -2..2) with the base seed carried parallel in time.
std::vector<Reduced> time_stencil(const SurfaceModel& s, const LoopState& loop, const Eigen::MatrixXd& seed,
                                  double dt) {
  std::vector<Reduced> out;
  for (int k = -2; k <= 2; ++k) {
    CarriedVectors cv{0, seed};
    LoopState l = loop;
    for (int i = 0; i < std::abs(k); ++i) l = step(s, l, k > 0 ? dt : -dt, &cv);
    out.push_back(reduce(s, l, cv.vectors));
  }
  return out;
}

template <class F>
auto five_point(const F& f, double dt) -> std::decay_t<decltype(f(0))> {
  return (f(0) - 8.0 * f(1) + 8.0 * f(3) - f(4)) / (12.0 * dt);
}

// R_{klc}^q = h(R(e_k, e_l) e_c, e_q) with R(X, Y)Z = K (h(Y, Z) X - h(X, Z) Y) per factor.
double riemann(const SurfaceModel& s, const VectorX& p, const Eigen::MatrixXd& e, int k, int l, int c, int q) {
  double out = 0.0;
  for (int f = 0; f < s.complex_dimension(); ++f) {
    const auto& fac = s.factor(f);
    const Vector3 pf = p.segment<3>(3 * f);
    auto blk = [&](int i) -> Vector3 { return e.block<3, 1>(3 * f, i); };
    const Vector3 z = fac.curvature(pf) * (fac.metric(pf, blk(l), blk(c)) * blk(k) - fac.metric(pf, blk(k), blk(c)) * blk(l));
    out += fac.metric(pf, z, blk(q));
  }
  return out;
}

}  // namespace

TEST(ParallelFrame, ConstantLoopKeepsSeed) {
  auto s = SurfaceModel::round_sphere();
  auto loop = constant_loop(s, SpectralGrid::circle(32));
  const auto seed = reference_frame(s, loop.points.col(0));
  auto r = reduce(s, loop, seed);
  for (const auto& f : r.frame.frames) EXPECT_LE((f - seed).norm(), 1e-14);
  EXPECT_EQ(r.coeffs.a.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ParallelFrame, GreatCircleTangentIsParallel) {
  auto s = SurfaceModel::round_sphere();
  auto loop = great_circle(s, SpectralGrid::circle(64));
  auto r = reduce(s, loop, tangent_seed(s, loop));
  const Eigen::MatrixXd ux = loop_derivative(loop);
  for (int j = 0; j < loop.size(); ++j) {
    EXPECT_LE((r.frame.frames[j].col(0) - ux.col(j) / ux.col(j).norm()).norm(), 1e-8);
    EXPECT_LE(std::abs(r.coeffs.Phi(0, j) - cplx(kTwoPi, 0.0)), 1e-8);
  }
}

TEST(ParallelFrame, OrthonormalAndReconstructs) {
  for (const auto& s : {warped(), SurfaceModel::hyperbolic_disk()}) {
    auto loop = perturbed_latitude(s, SpectralGrid::circle(128), 1.0, 0.2, 3);
    auto r = reduce(s, loop, tangent_seed(s, loop, 5), 5);
    const Eigen::MatrixXd ux = loop_derivative(loop);
    const Eigen::MatrixXd rec = reconstruct_tangent(r.coeffs, r.frame);
    EXPECT_LE((rec - ux).cwiseAbs().maxCoeff(), 1e-12);
    for (int j = 0; j < loop.size(); ++j) {
      const VectorX p = loop.points.col(j);
      EXPECT_LE(frame_defect(s, p, r.frame.frames[j]), 1e-10);
      EXPECT_NEAR(r.coeffs.a.col(j).squaredNorm(), s.metric(p, ux.col(j), ux.col(j)), 1e-10);
    }
  }
}

TEST(ParallelFrame, ProductTargetOnLine) {
  auto s = two_spheres();
  auto loop = product_pulse(s, 256);
  auto r = reduce(s, loop, reference_frame(s, loop.points.col(0)));
  for (int j = 0; j < loop.size(); ++j) EXPECT_LE(frame_defect(s, loop.points.col(j), r.frame.frames[j]), 1e-10);
  // Based in the middle: same frames up to the constant change of seed.
  const int b = 100;
  auto rb = reduce(s, loop, r.frame.frames[b], b);
  for (int j = 0; j < loop.size(); ++j) EXPECT_LE((rb.frame.frames[j] - r.frame.frames[j]).norm(), 1e-8);
}

TEST(Coefficients, TwistMatchesHolonomy) {
  for (const auto& s : {SurfaceModel::round_sphere(), warped()}) {
    auto loop = perturbed_latitude(s, SpectralGrid::circle(128), 0.8, 0.15, 2);
    auto r = reduce(s, loop, tangent_seed(s, loop, 7), 7);
    const double theta = holonomy_ode(s, loop).theta;
    EXPECT_LE(twist_residual(r.coeffs, theta), 1e-8);
    EXPECT_LE(std::abs(frame_holonomy(s, loop, r.frame)(0, 0) - std::polar(1.0, theta)), 1e-8);
  }
}

TEST(Coefficients, GaugeCovariance) {
  auto s = warped();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(64), 1.2, 0.1, 2);
  const auto seed = tangent_seed(s, loop);
  const double psi = 0.7;
  Eigen::MatrixXd rot = seed;
  rot.col(0) = std::cos(psi) * seed.col(0) + std::sin(psi) * seed.col(1);
  rot.col(1) = s.complex_structure(loop.points.col(0), rot.col(0));
  auto r0 = reduce(s, loop, seed), r1 = reduce(s, loop, rot);
  EXPECT_LE((r1.coeffs.Phi - std::polar(1.0, -psi) * r0.coeffs.Phi).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((reconstruct_tangent(r1.coeffs, r1.frame) - reconstruct_tangent(r0.coeffs, r0.frame)).cwiseAbs().maxCoeff(),
            1e-10);
}

TEST(Untwist, IdentityAndSyntheticInverse) {
  const int N = 64;
  FrameCoefficients c;
  c.domain = DomainKind::Circle;
  c.base = 0;
  c.Phi.resize(1, N);
  std::vector<cplx> g(N);
  const double theta = 1.3;
  for (int j = 0; j < N; ++j) {
    const double x = double(j) / N;
    g[j] = cplx(1.0 + 0.3 * std::cos(kTwoPi * x), 0.2 * std::sin(2 * kTwoPi * x));
    c.Phi(0, j) = std::polar(1.0, -theta * x) * g[j];
  }
  c.Phi_wrap = VectorXcd::Constant(1, std::polar(1.0, -theta) * g[0]);
  const auto phi = untwist(c, theta);
  double l2a = 0, l2p = 0;
  for (int j = 0; j < N; ++j) {
    EXPECT_LE(std::abs(phi[j] - g[j]), 1e-12);
    l2a += std::norm(c.Phi(0, j));
    l2p += std::norm(phi[j]);
  }
  EXPECT_NEAR(l2a, l2p, 1e-12);
  EXPECT_THROW(untwist(c, theta + 0.1), InconsistentHolonomy);
  const auto back = retwist(phi, theta, 0);
  for (int j = 0; j < N; ++j) EXPECT_LE(std::abs(back[j] - c.Phi(0, j)), 1e-12);

  c.Phi_wrap = VectorXcd::Constant(1, g[0]);
  for (int j = 0; j < N; ++j) c.Phi(0, j) = g[j];
  const auto same = untwist(c, 0.0);
  for (int j = 0; j < N; ++j) EXPECT_EQ(same[j], g[j]);
}

TEST(Untwist, LoopFieldIsSmoothAndPeriodic) {
  auto s = warped();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(128), 0.9, 0.2, 2);
  auto r = reduce(s, loop, tangent_seed(s, loop, 9), 9);
  const auto phi = untwist(r.coeffs, holonomy_ode(s, loop).theta);
  // Smooth periodic data has a rapidly decaying spectrum; a seam would not.
  const auto c = loop.grid.coefficients(phi);
  double top = 0.0, all = 0.0;
  for (int j = 0; j < loop.size(); ++j) {
    all = std::max(all, std::abs(c[j]));
    if (std::abs(loop.grid.mode(j)) > loop.size() / 4) top = std::max(top, std::abs(c[j]));
  }
  EXPECT_LE(top / all, 1e-10);
  const cplx closure = std::polar(1.0, r.coeffs.theta_used) * r.coeffs.Phi_wrap[0];
  EXPECT_LE(std::abs(closure - phi[9]), 1e-10);
}

TEST(Coefficients, TimeCoefficientsFromSpaceDerivative) {
  // u_t = sum b^j e_j with b = -i Phi_x in complex form.
  auto s = warped();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(128), 1.0, 0.15, 2);
  auto r = reduce(s, loop, tangent_seed(s, loop));
  const double theta = holonomy_ode(s, loop).theta;
  const auto phi = untwist(r.coeffs, theta);
  const auto dphi = loop.grid.derivative(phi);
  const Eigen::MatrixXd b = time_coefficients(s, loop, r.frame);
  for (int j = 0; j < loop.size(); ++j) {
    const double x = loop.grid.x(j);
    const cplx dPhi = std::polar(1.0, -theta * x) * (dphi[j] - cplx(0.0, theta) * phi[j]);
    EXPECT_LE(std::abs(cplx(b(0, j), b(1, j)) - cplx(0.0, -1.0) * dPhi), 1e-7);
  }
}

TEST(NonlinearTerms, ConnectionMatchesTimeDifference) {
  for (const auto& s : {warped(), SurfaceModel::hyperbolic_disk()}) {
    auto loop = perturbed_latitude(s, SpectralGrid::circle(64), 1.0, 0.15, 2);
    const double dt = 0.02 * stability_limit(loop.grid);
    const auto seed = tangent_seed(s, loop);
    const auto st = time_stencil(s, loop, seed, dt);
    const auto& mid = st[2];
    const auto t = nonlinear_terms(s, loop, mid.frame, mid.coeffs);
    const Eigen::MatrixXd ut = flow_rhs(s, loop);
    double worst = 0.0, scale = 0.0;
    for (int j = 0; j < loop.size(); ++j) {
      const VectorX p = loop.points.col(j);
      const VectorX e0 = mid.frame.frames[j].col(0);
      const VectorX de = five_point([&](int k) { return VectorX(st[k].frame.frames[j].col(0)); }, dt);
      const VectorX cov = de + s.connection(p, ut.col(j), e0);
      const double rho = s.metric(p, cov, mid.frame.frames[j].col(1));
      worst = std::max(worst, std::abs(t.A[j](0, 0) - cplx(0.0, rho)));
      scale = std::max(scale, std::abs(rho));
    }
    EXPECT_GT(scale, 1.0);
    EXPECT_LE(worst, 1e-6 * scale) << s.description();
  }
}

TEST(NonlinearTerms, SchroedingerEquationOnCircle) {
  // i phi_t = phi_xx - 2 i theta phi_x + V phi for the untwisted field.
  auto s = warped();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(64), 1.0, 0.15, 2);
  const double dt = 0.02 * stability_limit(loop.grid);
  const auto seed = tangent_seed(s, loop);
  auto st = time_stencil(s, loop, seed, dt);
  std::vector<std::vector<cplx>> phis(5);
  const double theta_prev = holonomy_ode(s, loop).theta;
  for (int k = 0; k < 5; ++k) {
    LoopState l = loop;
    CarriedVectors cv{0, seed};
    for (int i = 0; i < std::abs(k - 2); ++i) l = step(s, l, k > 2 ? dt : -dt, &cv);
    phis[k] = untwist(st[k].coeffs, continue_lift(theta_prev, holonomy_ode(s, l).theta));
  }
  const double theta = holonomy_ode(s, loop).theta, rate = holonomy_rate(s, loop);
  const auto& mid = st[2];
  const auto t = nonlinear_terms(s, loop, mid.frame, mid.coeffs);
  const auto V = circle_potential(loop.grid, t, theta, rate);
  const auto d1 = loop.grid.derivative(phis[2], 1), d2 = loop.grid.derivative(phis[2], 2);
  double worst = 0.0, scale = 0.0;
  for (int j = 0; j < loop.size(); ++j) {
    const cplx dphi = five_point([&](int k) { return phis[k][j]; }, dt);
    const cplx lhs = cplx(0.0, 1.0) * dphi;
    const cplx rhs = d2[j] - cplx(0.0, 2.0 * theta) * d1[j] + V[j] * phis[2][j];
    worst = std::max(worst, std::abs(lhs - rhs));
    scale = std::max(scale, std::abs(d2[j]));
  }
  EXPECT_LE(worst, 1e-6 * scale);
}

TEST(NonlinearTerms, AveragingIdentity) {
  auto s = warped();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(128), 1.0, 0.2, 3);
  auto r = reduce(s, loop, tangent_seed(s, loop, 17), 17);
  const auto t = nonlinear_terms(s, loop, r.frame, r.coeffs);
  EXPECT_GT(std::abs(t.jump(0, 0)), 1e-2);
  for (int j = 0; j < loop.size(); ++j) {
    const cplx sum = t.Q[j](0, 0) + t.S[j](0, 0) - t.W(0, 0) + t.T[j](0, 0);
    EXPECT_LE(std::abs(sum - t.A[j](0, 0)), 1e-10);
  }
  // The jump of A across one turn is i theta_t.
  EXPECT_NEAR(t.jump(0, 0).imag(), holonomy_rate(s, loop), 1e-10);
  EXPECT_NEAR(t.jump(0, 0).real(), 0.0, 1e-14);
}

TEST(NonlinearTerms, DirectConnectionIntegral) {
  // Integrating A_x = R(u_x, u_t) from the base reproduces the contraction route.
  auto s = warped();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(128), 1.0, 0.2, 2);
  const int b = 11;
  auto r = reduce(s, loop, tangent_seed(s, loop, b), b);
  const auto t = nonlinear_terms(s, loop, r.frame, r.coeffs);
  const auto ax = connection_x_derivative(s, loop, r.frame, r.coeffs);
  std::vector<double> rho_x(loop.size());
  for (int j = 0; j < loop.size(); ++j) rho_x[j] = complexify(ax[j])(0, 0).imag();
  const auto F = loop.grid.periodic_antiderivative(rho_x);
  double mean = 0.0;
  for (double v : rho_x) mean += v / loop.size();
  const auto off = base_offsets(loop.grid, b);
  double worst = 0.0, scale = 0.0;
  for (int j = 0; j < loop.size(); ++j) {
    const double rho = F[j] - F[b] + mean * off[j];
    worst = std::max(worst, std::abs(cplx(0.0, rho) - t.A[j](0, 0)));
    scale = std::max(scale, std::abs(rho));
  }
  EXPECT_GT(scale, 1.0);
  EXPECT_LE(worst, 1e-9 * scale);
}

TEST(NonlinearTerms, ProductLineContractionRoutes) {
  // Same check on the line; both routes use the trapezoid rule, so compare the
  // error decay under refinement.
  auto s = two_spheres();
  std::vector<double> errs;
  for (int N : {256, 512}) {
    auto loop = product_pulse(s, N);
    auto r = reduce(s, loop, reference_frame(s, loop.points.col(0)));
    const auto t = nonlinear_terms(s, loop, r.frame, r.coeffs);
    const auto ax = connection_x_derivative(s, loop, r.frame, r.coeffs);
    MatrixXcd acc = MatrixXcd::Zero(2, 2);
    double worst = 0.0, scale = 0.0;
    for (int j = 1; j < loop.size(); ++j) {
      acc += 0.5 * loop.grid.dx() * (complexify(ax[j]) + complexify(ax[j - 1]));
      worst = std::max(worst, (acc - t.A[j]).norm());
      scale = std::max(scale, acc.norm());
    }
    EXPECT_GT(scale, 0.1);
    EXPECT_LE(t.boundary_residual, 1e-12);
    errs.push_back(worst / scale);
  }
  EXPECT_LE(errs[1], 1e-3);
  EXPECT_GE(errs[0] / errs[1], 3.5);
}

TEST(NonlinearTerms, ConstantCurvatureContractionOracle) {
  auto s = two_spheres();
  auto loop = product_pulse(s, 128);
  auto r = reduce(s, loop, reference_frame(s, loop.points.col(0)));
  const auto con = curvature_contractions(s, loop, r.frame, r.coeffs);
  const int n = 2;
  double worst = 0.0, scale = 0.0;
  for (int j = 0; j < loop.size(); j += 5) {
    const VectorX p = loop.points.col(j);
    const auto& e = r.frame.frames[j];
    const Eigen::VectorXd a = r.coeffs.a.col(j);
    for (int q = 0; q < 2 * n; ++q)
      for (int c = 0; c < 2 * n; ++c) {
        double v = 0.0;
        for (int al = 0; al < n; ++al)
          for (int be = 0; be < n; ++be)
            v += a[al] * a[be + n] * riemann(s, p, e, al, be, c, q) +
                 0.5 * (a[al + n] * a[be + n] + a[al] * a[be]) * riemann(s, p, e, al + n, be, c, q);
        worst = std::max(worst, std::abs(v - con.P[j](q, c)));
        scale = std::max(scale, std::abs(v));
      }
    EXPECT_EQ(con.D[j].norm(), 0.0);
  }
  EXPECT_GT(scale, 1e-2);
  EXPECT_LE(worst, 1e-10 * scale);
  // n = 1: S = i K |Phi|^2 / 2.
  auto s1 = SurfaceModel::round_sphere(1.3);
  auto l1 = perturbed_latitude(s1, SpectralGrid::circle(64), 1.0, 0.2, 2);
  auto r1 = reduce(s1, l1, tangent_seed(s1, l1));
  const auto t1 = nonlinear_terms(s1, l1, r1.frame, r1.coeffs);
  for (int j = 0; j < l1.size(); ++j) {
    const cplx expect(0.0, 0.5 / (1.3 * 1.3) * std::norm(r1.coeffs.Phi(0, j)));
    EXPECT_LE(std::abs(t1.S[j](0, 0) - expect), 1e-10 * std::abs(expect));
  }
}

TEST(NonlinearTerms, AverageIndependentOfBase) {
  auto s = warped();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(128), 1.0, 0.2, 3);
  std::vector<cplx> Ws;
  cplx direct = 0.0;
  for (int b = 0; b < 128; b += 16) {
    auto r = reduce(s, loop, tangent_seed(s, loop, b), b);
    const auto t = nonlinear_terms(s, loop, r.frame, r.coeffs);
    Ws.push_back(t.W(0, 0));
    if (b == 0)
      for (int j = 0; j < loop.size(); ++j) direct += t.S[j](0, 0) / double(loop.size());
  }
  for (cplx w : Ws) EXPECT_LE(std::abs(w - direct), 1e-8);
}

TEST(NonlinearTerms, PotentialFromLoopAgrees) {
  auto s = warped();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(128), 1.0, 0.2, 3);
  const int b = 40;
  auto r = reduce(s, loop, tangent_seed(s, loop, b), b);
  const auto t = nonlinear_terms(s, loop, r.frame, r.coeffs);
  const double theta = holonomy_ode(s, loop).theta;
  const auto V1 = circle_potential(loop.grid, t, theta, holonomy_rate(s, loop));
  const auto V2 = circle_potential_from_loop(s, loop, theta, b);
  for (int j = 0; j < loop.size(); ++j) EXPECT_NEAR(V1[j], V2[j], 1e-9);
}

TEST(Assembly, ZeroAndConstantCurvatureCubic) {
  auto s = SurfaceModel::round_sphere();
  auto loop = perturbed_latitude(s, SpectralGrid::circle(64), 1.0, 0.2, 2);
  auto r = reduce(s, loop, tangent_seed(s, loop));
  const auto t = nonlinear_terms(s, loop, r.frame, r.coeffs);
  EXPECT_EQ(holonomy_rate(s, loop), 0.0);
  const auto phi = untwist(r.coeffs, holonomy_ode(s, loop).theta);
  MatrixXcd field(1, loop.size());
  for (int j = 0; j < loop.size(); ++j) field(0, j) = phi[j];
  AssemblyInput in;
  in.terms = &t;
  in.field = &field;
  const MatrixXcd F = assemble_nls_rhs(loop.grid, in);
  const double ref = std::norm(phi[0]);
  for (int j = 0; j < loop.size(); ++j) {
    const cplx cubic = 0.5 * (std::norm(phi[j]) - ref) * phi[j];
    EXPECT_LE(std::abs(F(0, j) - cubic), 1e-10 * std::max(1.0, std::abs(cubic)));
  }
  const MatrixXcd zero = MatrixXcd::Zero(1, loop.size());
  in.field = &zero;
  EXPECT_EQ(assemble_nls_rhs(loop.grid, in).norm(), 0.0);
  in.mode = AssemblyMode::VariableMetric;
  EXPECT_THROW(assemble_nls_rhs(loop.grid, in), UnsupportedOperation);
}

TEST(Assembly, LineSchroedingerEquation) {
  // i Phi_t = Phi_xx - i A Phi on the line for a product target.
  auto s = two_spheres();
  auto loop = product_pulse(s, 128);
  const double dt = 0.02 * stability_limit(loop.grid);
  const auto seed = reference_frame(s, loop.points.col(0));
  const auto st = time_stencil(s, loop, seed, dt);
  const auto& mid = st[2];
  const auto t = nonlinear_terms(s, loop, mid.frame, mid.coeffs);
  AssemblyInput in;
  in.terms = &t;
  in.field = &mid.coeffs.Phi;
  const MatrixXcd F = assemble_nls_rhs(loop.grid, in);
  double worst = 0.0, scale = 0.0;
  for (int r = 0; r < 2; ++r) {
    std::vector<cplx> row(loop.size());
    for (int j = 0; j < loop.size(); ++j) row[j] = mid.coeffs.Phi(r, j);
    const auto d2 = loop.grid.derivative(row, 2);
    for (int j = 0; j < loop.size(); ++j) {
      const cplx dphi = five_point([&](int k) { return st[k].coeffs.Phi(r, j); }, dt);
      worst = std::max(worst, std::abs(cplx(0.0, 1.0) * dphi - d2[j] - F(r, j)));
      scale = std::max(scale, std::abs(d2[j]));
    }
  }
  EXPECT_LE(worst, 1e-6 * scale);
}

TEST(Assembly, VariableMetricReducesToStandard) {
  auto s = two_spheres();
  auto loop = product_pulse(s, 128);
  auto r = reduce(s, loop, reference_frame(s, loop.points.col(0)));
  const auto t = nonlinear_terms(s, loop, r.frame, r.coeffs);
  AssemblyInput in;
  in.terms = &t;
  in.field = &r.coeffs.Phi;
  const MatrixXcd F0 = assemble_nls_rhs(loop.grid, in);
  std::vector<double> ones(loop.size(), 1.0);
  in.mode = AssemblyMode::VariableMetric;
  in.alpha = &ones;
  EXPECT_LE((assemble_nls_rhs(loop.grid, in) - F0).norm(), 1e-12);
  // alpha = 1 + c: the extra term is c Phi_xx.
  std::vector<double> shifted(loop.size(), 1.25);
  in.alpha = &shifted;
  const MatrixXcd F1 = assemble_nls_rhs(loop.grid, in);
  std::vector<cplx> row(loop.size());
  for (int j = 0; j < loop.size(); ++j) row[j] = r.coeffs.Phi(0, j);
  const auto d2 = loop.grid.derivative(row, 2);
  for (int j = 0; j < loop.size(); ++j) EXPECT_LE(std::abs(F1(0, j) - F0(0, j) - 0.25 * d2[j]), 1e-9);
}

TEST(NonlinearTerms, LineWithoutPaddingRejected) {
  auto s = SurfaceModel::round_sphere();
  EXPECT_THROW(pulse(s, SpectralGrid::line(128, 2.0), 0.5, 1.0), DomainError);
  auto good = pulse(s, SpectralGrid::line(128, 8.0), 0.5, 1.0);
  LoopState loop(SpectralGrid::line(128, 2.0), good.points.middleCols(0, 128));
  auto r = reduce(s, loop, reference_frame(s, loop.points.col(0)));
  for (int j = 0; j < 128; ++j) {
    const double x = loop.grid.x(j);
    loop.points.col(j) = sphere_point(0.5 * std::exp(-x * x), x);
  }
  r = reduce(s, loop, reference_frame(s, loop.points.col(0)));
  EXPECT_THROW(nonlinear_terms(s, loop, r.frame, r.coeffs), DomainError);
}

TEST(SpacetimeShift, ExactRotationAndNorms) {
  const auto grid = SpectralGrid::circle(64);
  std::vector<cplx> f(64);
  for (int j = 0; j < 64; ++j) f[j] = std::exp(std::sin(kTwoPi * grid.x(j))) * std::polar(1.0, 3 * kTwoPi * grid.x(j));
  // theta constant: s = 2 theta t. Choose theta so that s(t1) = 5 dx.
  const double t1 = 0.5, theta = 5.0 / 64 / (2 * t1);
  const auto out = spacetime_shift(grid, {f, f}, {0.0, t1}, {theta, theta});
  for (int j = 0; j < 64; ++j) {
    EXPECT_EQ(out[0][j], f[j]);
    EXPECT_EQ(out[1][j], f[(j + 5) % 64]);
  }
  const auto gen = spacetime_shift(grid, {f}, {0.0}, {0.0});
  EXPECT_EQ(gen[0], f);
  const auto odd = spacetime_shift(grid, {f, f}, {0.0, 0.3}, {0.37, 0.41});
  double l4a = 0, l4b = 0;
  for (int j = 0; j < 64; ++j) {
    l4a += std::pow(std::abs(f[j]), 4);
    l4b += std::pow(std::abs(odd[1][j]), 4);
  }
  EXPECT_NEAR(l4a, l4b, 1e-10 * l4a);
  EXPECT_LE(std::abs(odd[1][3] - grid.evaluate(f, grid.x(3) + 0.3 * (0.37 + 0.41))), 1e-12);
}
