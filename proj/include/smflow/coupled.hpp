#pragma once

// Direct flow and reduced Schroedinger evolution side by side.
//
// Circle (n = 1): u advances by the direct integrator with the base frame
// seed carried along t -> u(t, x_b). Every macro step of length dt the
// shifted field phi~ takes one Strang step with potential V(y + s) sampled at
// both ends of the step; s = 2 int theta accumulates by the trapezoid rule.
// The reduction recomputed from u at the new time gives the reference phi~.
//
// Line: Phi takes Strang steps with the Hermitian block potential -i A and is
// compared with the coefficients recomputed from u.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "smflow/errors.hpp"
#include "smflow/flow_direct.hpp"
#include "smflow/frame_reduction.hpp"
#include "smflow/geometry.hpp"
#include "smflow/holonomy.hpp"
#include "smflow/nls.hpp"
#include "smflow/spectral.hpp"

namespace smflow {

/// Direct substeps per macro step: the smallest count keeping the direct
/// step within the stability limit.
inline int direct_substeps(const SpectralGrid& grid, double dt) {
  const double limit = stability_limit(grid);
  return std::max(1, static_cast<int>(std::ceil(std::abs(dt) / limit * (1.0 - 1e-12))));
}

struct CoupledSample {
  double t = 0.0;
  double energy = 0.0;
  double a_l2 = 0.0;
  double theta_ode = 0.0;
  double theta_gb = 0.0;
  double theta_rate = 0.0;
  double theta_rate_integrated = 0.0;
  double shift = 0.0;
  double cross_error = 0.0;     // sup |NLS field - recomputed field|
  double twist_residual = 0.0;  // circle only
  double periodicity_defect = 0.0;
  double phi_l2 = 0.0;          // of the NLS field
  double phi_l4 = 0.0;
};

/// The reduction of one loop with a given seed at sample 0.
struct CircleReduction {
  FrameField frame;
  FrameCoefficients coeffs;
  double theta = 0.0;
  double rate = 0.0;
  std::vector<double> V;       // unshifted potential on the fundamental domain
  std::vector<cplx> phi;       // untwisted field
  double twist = 0.0;
  double periodicity = 0.0;    // |phi at x_b + 1 - phi(x_b)|
};

inline CircleReduction reduce_circle(const SurfaceModel& surface, const LoopState& loop, const Eigen::MatrixXd& seed,
                                     double theta_prev) {
  CircleReduction r;
  r.frame = parallel_frame(surface, loop, seed, 0);
  r.coeffs = coefficients(surface, loop, r.frame);
  r.theta = continue_lift(theta_prev, holonomy_ode(surface, loop).theta);
  r.rate = holonomy_rate(surface, loop);
  r.twist = twist_residual(r.coeffs, r.theta);
  r.phi = untwist(r.coeffs, r.theta);
  r.periodicity = std::abs(std::polar(1.0, r.theta) * r.coeffs.Phi_wrap[0] - r.phi[0]);
  const auto terms = nonlinear_terms(surface, loop, r.frame, r.coeffs);
  r.V = circle_potential(loop.grid, terms, r.theta, r.rate);
  return r;
}

inline double coefficient_l2(const FrameCoefficients& c, const SpectralGrid& grid) {
  return std::sqrt(c.Phi.squaredNorm() * grid.dx());
}

class CircleCoupledRun {
 public:
  /// `substeps` > 0 fixes the direct steps per macro step (each must stay
  /// within the stability limit); 0 picks the smallest admissible count.
  CircleCoupledRun(SurfaceModel surface, LoopState loop, double dt, SplitStepOptions opt = {}, int substeps = 0)
      : surface_(std::move(surface)), loop_(std::move(loop)), dt_(dt), opt_(opt),
        phit_(ComplexField::scalar(loop_.grid, std::vector<cplx>(loop_.size()))) {
    if (surface_.complex_dimension() != 1) throw UnsupportedOperation("circle coupled run needs n = 1");
    if (!loop_.grid.is_circle()) throw DomainError("circle coupled run needs the circle domain");
    if (!(dt_ > 0.0)) throw DomainError("macro step must be positive");
    substeps_ = substeps > 0 ? substeps : direct_substeps(loop_.grid, dt_);
    if (dt_ / substeps_ > stability_limit(loop_.grid) * (1.0 + 1e-12))
      throw RejectedStep("direct substep above the stability limit", stability_limit(loop_.grid));
    carried_ = CarriedVectors{0, tangent_seed(surface_, loop_, 0)};
    const double theta0 = holonomy_ode(surface_, loop_).theta;
    red_ = reduce_circle(surface_, loop_, carried_.vectors, theta0);
    phit_ = ComplexField::scalar(loop_.grid, red_.phi);
    theta_gb_ = theta_rate_int_ = red_.theta;
    rate_ = red_.rate;
    velocity_ = flow_rhs(surface_, loop_);
    record_.append(loop_.time, red_.theta, theta_gb_, red_.rate, MatrixXcd::Constant(1, 1, std::polar(1.0, -red_.theta)));
    push_sample();
  }

  /// One macro step of length dt.
  void advance() {
    const double t0 = loop_.time, h = dt_ / substeps_;
    for (int k = 0; k < substeps_; ++k) {
      LoopState next = step(surface_, loop_, h, &carried_);
      Eigen::MatrixXd vnext = flow_rhs(surface_, next);
      const std::vector<Eigen::MatrixXd> vel{velocity_, vnext};
      theta_gb_ = holonomy_gauss_bonnet(surface_, {loop_, next}, theta_gb_, &vel).theta.back();
      const double r1 = holonomy_rate(surface_, next);
      theta_rate_int_ += 0.5 * h * (rate_ + r1);
      rate_ = r1;
      loop_ = std::move(next);
      velocity_ = std::move(vnext);
    }
    loop_.time = t0 + dt_;
    CircleReduction nr = reduce_circle(surface_, loop_, carried_.vectors, red_.theta);
    const double s1 = s_ + dt_ * (red_.theta + nr.theta);
    const auto V0 = loop_.grid.shift(red_.V, s_), V1 = loop_.grid.shift(nr.V, s1);
    Nonlinearity nl;
    nl.potential = [&](const ComplexField&, double t) { return t < t0 + 0.5 * dt_ ? V0 : V1; };
    phit_ = split_step(phit_, dt_, nl, t0, opt_);
    s_ = s1;
    red_ = std::move(nr);
    record_.append(loop_.time, red_.theta, theta_gb_, red_.rate, MatrixXcd::Constant(1, 1, std::polar(1.0, -red_.theta)));
    push_sample();
  }

  void run(double T) {
    const int steps = static_cast<int>(std::llround(T / dt_));
    if (std::abs(steps * dt_ - T) > 1e-9 * std::max(1.0, T)) throw DomainError("final time is not a multiple of the macro step");
    for (int k = 0; k < steps; ++k) advance();
  }

  /// phi~ recomputed from u at the current time.
  ComplexField reference() const { return ComplexField::scalar(loop_.grid, loop_.grid.shift(red_.phi, s_)); }

  const SurfaceModel& surface() const { return surface_; }
  const LoopState& loop() const { return loop_; }
  const ComplexField& phi_tilde() const { return phit_; }
  const CircleReduction& reduction() const { return red_; }
  const std::vector<CoupledSample>& samples() const { return samples_; }
  const HolonomyRecord& holonomy() const { return record_; }
  double shift() const { return s_; }
  int substeps() const { return substeps_; }
  double dt() const { return dt_; }

  double max_cross_error() const {
    double m = 0.0;
    for (const auto& s : samples_) m = std::max(m, s.cross_error);
    return m;
  }
  double max_twist_residual() const {
    double m = 0.0;
    for (const auto& s : samples_) m = std::max(m, s.twist_residual);
    return m;
  }

 private:
  void push_sample() {
    CoupledSample s;
    s.t = loop_.time;
    s.energy = energy(surface_, loop_);
    s.a_l2 = coefficient_l2(red_.coeffs, loop_.grid);
    s.theta_ode = record_.theta_ode.back();
    s.theta_gb = theta_gb_;
    s.theta_rate = red_.rate;
    s.theta_rate_integrated = theta_rate_int_;
    s.shift = s_;
    s.cross_error = (phit_.values() - reference().values()).cwiseAbs().maxCoeff();
    s.twist_residual = red_.twist;
    s.periodicity_defect = red_.periodicity;
    s.phi_l2 = phit_.l2_norm();
    s.phi_l4 = phit_.lp_norm(4.0);
    samples_.push_back(s);
  }

  SurfaceModel surface_;
  LoopState loop_;
  double dt_;
  SplitStepOptions opt_;
  int substeps_ = 1;
  CarriedVectors carried_;
  CircleReduction red_;
  ComplexField phit_;
  double s_ = 0.0;
  double theta_gb_ = 0.0;
  double theta_rate_int_ = 0.0;  // trapezoid over direct substeps
  double rate_ = 0.0;
  Eigen::MatrixXd velocity_;
  HolonomyRecord record_;
  std::vector<CoupledSample> samples_;
};

/// Time L^4 norm of phi over the window [t - w, t] and the circle, rectangle
/// rule over the recorded samples.
inline double windowed_l4(const std::vector<CoupledSample>& s, double w) {
  if (s.empty()) return 0.0;
  const double t = s.back().t;
  double acc = 0.0;
  for (size_t k = 1; k < s.size(); ++k)
    if (s[k - 1].t >= t - w - 1e-12) acc += (s[k].t - s[k - 1].t) * std::pow(s[k].phi_l4, 4);
  return std::pow(acc, 0.25);
}

// ---------------------------------------------------------------------------
// Line

struct LineReduction {
  FrameField frame;
  FrameCoefficients coeffs;
  NonlinearTerms terms;
  std::vector<MatrixXcd> M;  // -i A, Hermitian part
  double hermitian_defect = 0.0;
};

inline LineReduction reduce_line(const SurfaceModel& surface, const LoopState& loop, const Eigen::MatrixXd& seed) {
  LineReduction r;
  r.frame = parallel_frame(surface, loop, seed, 0);
  r.coeffs = coefficients(surface, loop, r.frame);
  r.terms = nonlinear_terms(surface, loop, r.frame, r.coeffs);
  r.M.resize(loop.size());
  for (int j = 0; j < loop.size(); ++j) {
    const MatrixXcd m = cplx(0.0, -1.0) * r.terms.A[j];
    r.M[j] = 0.5 * (m + m.adjoint());
    r.hermitian_defect = std::max(r.hermitian_defect, (m - m.adjoint()).norm());
  }
  return r;
}

class LineCoupledRun {
 public:
  /// `substeps` > 0 fixes the direct steps per macro step (each must stay
  /// within the stability limit); 0 picks the smallest admissible count.
  LineCoupledRun(SurfaceModel surface, LoopState loop, double dt, SplitStepOptions opt = {}, int substeps = 0)
      : surface_(std::move(surface)), loop_(std::move(loop)), dt_(dt), opt_(opt),
        Phi_(loop_.grid, MatrixXcd::Zero(1, loop_.size())) {
    if (loop_.grid.is_circle()) throw DomainError("line coupled run needs the line domain");
    if (!(dt_ > 0.0)) throw DomainError("macro step must be positive");
    substeps_ = substeps > 0 ? substeps : direct_substeps(loop_.grid, dt_);
    if (dt_ / substeps_ > stability_limit(loop_.grid) * (1.0 + 1e-12))
      throw RejectedStep("direct substep above the stability limit", stability_limit(loop_.grid));
    carried_ = CarriedVectors{0, tangent_seed(surface_, loop_, 0)};
    red_ = reduce_line(surface_, loop_, carried_.vectors);
    Phi_ = ComplexField(loop_.grid, red_.coeffs.Phi);
    push_sample();
  }

  void advance() {
    const double t0 = loop_.time;
    loop_ = smflow::advance(surface_, loop_, dt_ / substeps_, substeps_, &carried_);
    loop_.time = t0 + dt_;
    LineReduction nr = reduce_line(surface_, loop_, carried_.vectors);
    Nonlinearity nl;
    nl.matrix_potential = [&](const ComplexField&, double t) { return t < t0 + 0.5 * dt_ ? red_.M : nr.M; };
    Phi_ = split_step(Phi_, dt_, nl, t0, opt_);
    red_ = std::move(nr);
    push_sample();
  }

  void run(double T) {
    const int steps = static_cast<int>(std::llround(T / dt_));
    if (std::abs(steps * dt_ - T) > 1e-9 * std::max(1.0, T)) throw DomainError("final time is not a multiple of the macro step");
    for (int k = 0; k < steps; ++k) advance();
  }

  ComplexField reference() const { return ComplexField(loop_.grid, red_.coeffs.Phi); }
  const LoopState& loop() const { return loop_; }
  const ComplexField& field() const { return Phi_; }
  const LineReduction& reduction() const { return red_; }
  const std::vector<CoupledSample>& samples() const { return samples_; }
  double max_cross_error() const {
    double m = 0.0;
    for (const auto& s : samples_) m = std::max(m, s.cross_error);
    return m;
  }

 private:
  void push_sample() {
    CoupledSample s;
    s.t = loop_.time;
    s.energy = energy(surface_, loop_);
    s.a_l2 = coefficient_l2(red_.coeffs, loop_.grid);
    s.cross_error = (Phi_.values() - red_.coeffs.Phi).colwise().norm().maxCoeff();
    s.periodicity_defect = red_.terms.boundary_residual;
    s.phi_l2 = Phi_.l2_norm();
    s.phi_l4 = Phi_.lp_norm(4.0);
    samples_.push_back(s);
  }

  SurfaceModel surface_;
  LoopState loop_;
  double dt_;
  SplitStepOptions opt_;
  int substeps_ = 1;
  CarriedVectors carried_;
  LineReduction red_;
  ComplexField Phi_;
  std::vector<CoupledSample> samples_;
};

// ---------------------------------------------------------------------------
// Autonomous (experimental, circle, n = 1)

/// u from the untwisted field, the holonomy lift and the base data: RK4 in x
/// on u_x = Re Phi e + Im Phi J e with e parallel along u, samples from a
/// twice-refined interpolant. The closure gap u(x_b + 1) - u(x_b) is reported.
struct Reconstruction {
  LoopState loop;
  double closure_gap = 0.0;
};

inline Reconstruction reconstruct_loop(const SurfaceModel& surface, const SpectralGrid& grid,
                                       const std::vector<cplx>& phi, double theta, const VectorX& base_point,
                                       const Eigen::MatrixXd& seed) {
  if (surface.complex_dimension() != 1) throw UnsupportedOperation("reconstruction needs n = 1");
  const int N = grid.size();
  Eigen::MatrixXd rows(2, N);
  for (int j = 0; j < N; ++j) rows.col(j) << phi[j].real(), phi[j].imag();
  const Eigen::MatrixXd fine = grid.refine_rows(rows, 2);
  auto Phi_at = [&](int i) {  // i indexes half steps, 0..2N
    const cplx v(fine(0, i % (2 * N)), fine(1, i % (2 * N)));
    return std::polar(1.0, -theta * (0.5 * i / N)) * v;
  };
  const double dx = grid.dx();
  Eigen::MatrixXd pts(base_point.size(), N);
  VectorX p = base_point;
  VectorX e = seed.col(0);
  auto rate = [&](const VectorX& q, const VectorX& f, cplx z) {
    const VectorX v = z.real() * f + z.imag() * surface.complex_structure(q, f);
    return std::pair<VectorX, VectorX>{v, surface.transport_velocity(q, v, f)};
  };
  for (int j = 0; j < N; ++j) {
    pts.col(j) = p;
    const cplx z0 = Phi_at(2 * j), zm = Phi_at(2 * j + 1), z1 = Phi_at(2 * j + 2);
    const auto [k1, l1] = rate(p, e, z0);
    const auto [k2, l2] = rate(p + 0.5 * dx * k1, e + 0.5 * dx * l1, zm);
    const auto [k3, l3] = rate(p + 0.5 * dx * k2, e + 0.5 * dx * l2, zm);
    const auto [k4, l4] = rate(p + dx * k3, e + dx * l3, z1);
    p = surface.retract(p + dx / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    e = e + dx / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    e = surface.tangent_part(p, e);
    e /= surface.norm(p, e);
  }
  Reconstruction r{LoopState(grid, pts), 0.0};
  r.closure_gap = (p - base_point).norm();
  return r;
}

/// phi~ evolves alone. The base point and seed follow u_t = -J nabla_x u_x at
/// the base (Heun in time), theta follows the integrated holonomy rate, and
/// the potential comes from the reconstructed loop.
class AutonomousRun {
 public:
  AutonomousRun(SurfaceModel surface, const LoopState& loop, double dt)
      : surface_(std::move(surface)), grid_(loop.grid), dt_(dt),
        phit_(ComplexField::scalar(loop.grid, std::vector<cplx>(loop.size()))) {
    if (surface_.complex_dimension() != 1 || !grid_.is_circle())
      throw UnsupportedOperation("autonomous mode is available for n = 1 on the circle only");
    seed_ = tangent_seed(surface_, loop, 0);
    base_ = loop.points.col(0);
    const auto r = reduce_circle(surface_, loop, seed_, holonomy_ode(surface_, loop).theta);
    theta_ = r.theta;
    phit_ = ComplexField::scalar(grid_, r.phi);
  }

  void advance() {
    const auto st0 = evaluate(phit_.row(), theta_, s_, base_, seed_);
    // Predictor for the base data and theta.
    const VectorX b1 = surface_.retract(base_ + dt_ * st0.base_velocity);
    Eigen::MatrixXd e1 = seed_ + dt_ * st0.seed_velocity;
    fix_seed(b1, e1);
    const double th1 = theta_ + dt_ * st0.rate;
    const double s1 = s_ + dt_ * (theta_ + th1);
    Nonlinearity first;
    first.potential = [&](const ComplexField&, double) { return st0.V; };
    const ComplexField mid = free_propagate(
        ComplexField(grid_, detail::nonlinear_flow(phit_, t_, 0.5 * dt_, first), Convention::Physical), dt_);
    // Provisional end-of-step field for the corrector's velocities.
    Nonlinearity trial;
    const auto pre = evaluate(mid.row(), th1, s1, b1, e1);
    trial.potential = [&](const ComplexField&, double) { return pre.V; };
    const ComplexField end(grid_, detail::nonlinear_flow(mid, t_ + dt_, 0.5 * dt_, trial), Convention::Physical);
    const auto st1 = evaluate(end.row(), th1, s1, b1, e1);
    // Corrector.
    base_ = surface_.retract(base_ + 0.5 * dt_ * (st0.base_velocity + st1.base_velocity));
    seed_ = seed_ + 0.5 * dt_ * (st0.seed_velocity + st1.seed_velocity);
    fix_seed(base_, seed_);
    const double th0 = theta_;
    theta_ = th0 + 0.5 * dt_ * (st0.rate + st1.rate);
    s_ = s_ + dt_ * (th0 + theta_);
    const auto st2 = evaluate(mid.row(), theta_, s_, base_, seed_);
    Nonlinearity second;
    second.potential = [&](const ComplexField&, double) { return st2.V; };
    phit_ = ComplexField(grid_, detail::nonlinear_flow(mid, t_ + dt_, 0.5 * dt_, second), Convention::Physical);
    detail::check_finite(phit_.values(), grid_, t_, dt_, "autonomous");
    t_ += dt_;
    closure_gap_ = std::max(closure_gap_, evaluate(phit_.row(), theta_, s_, base_, seed_).closure_gap);
  }

  void run(double T) {
    const int steps = static_cast<int>(std::llround(T / dt_));
    for (int k = 0; k < steps; ++k) advance();
  }

  const ComplexField& phi_tilde() const { return phit_; }
  double theta() const { return theta_; }
  double shift() const { return s_; }
  double time() const { return t_; }
  double max_closure_gap() const { return closure_gap_; }
  LoopState loop() const { return reconstruct_loop(surface_, grid_, untwisted(phit_.row(), s_), theta_, base_, seed_).loop; }

 private:
  struct Stage {
    std::vector<double> V;
    VectorX base_velocity;
    Eigen::MatrixXd seed_velocity;
    double rate = 0.0;
    double closure_gap = 0.0;
  };

  std::vector<cplx> untwisted(const std::vector<cplx>& phit, double s) const { return grid_.shift(phit, -s); }

  Stage evaluate(const std::vector<cplx>& phit, double theta, double s, const VectorX& base,
                 const Eigen::MatrixXd& seed) const {
    const auto phi = untwisted(phit, s);
    const auto rec = reconstruct_loop(surface_, grid_, phi, theta, base, seed);
    Stage st;
    st.closure_gap = rec.closure_gap;
    st.V = grid_.shift(circle_potential_from_loop(surface_, rec.loop, theta, 0), s);
    st.rate = holonomy_rate(surface_, rec.loop);
    // Phi_x at the base: phi_x - i theta phi.
    const auto dphi = grid_.derivative(phi, 1);
    const cplx z = dphi[0] - cplx(0.0, theta) * phi[0];
    const VectorX e = seed.col(0), Je = seed.col(1);
    const VectorX nabla = z.real() * e + z.imag() * Je;
    st.base_velocity = -surface_.complex_structure(base, nabla);
    st.seed_velocity.resize(seed.rows(), seed.cols());
    for (Eigen::Index c = 0; c < seed.cols(); ++c)
      st.seed_velocity.col(c) = surface_.transport_velocity(base, st.base_velocity, seed.col(c));
    return st;
  }

  void fix_seed(const VectorX& p, Eigen::MatrixXd& e) const {
    for (Eigen::Index c = 0; c < e.cols(); ++c) e.col(c) = surface_.tangent_part(p, e.col(c));
    unitarize_frame(surface_, p, e);
  }

  SurfaceModel surface_;
  SpectralGrid grid_;
  double dt_;
  double t_ = 0.0;
  ComplexField phit_;
  double theta_ = 0.0;
  double s_ = 0.0;
  VectorX base_;
  Eigen::MatrixXd seed_;
  double closure_gap_ = 0.0;
};

}  // namespace smflow
