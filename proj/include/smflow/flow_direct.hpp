#pragma once

// Direct integrator for u_t = -J tau(u) on the circle (period 1) or a
// truncated line.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "smflow/errors.hpp"
#include "smflow/geometry.hpp"
#include "smflow/spectral.hpp"

namespace smflow {

/// Sampled map u(t, .). Columns of `points` are stacked factor blocks.
/// `winding` is the lift offset u(x + 1) - u(x) (non-zero only for loops that
/// wrap around a flat-torus factor); spectral derivatives act on u - winding*x.
struct LoopState {
  SpectralGrid grid;
  Eigen::MatrixXd points;
  double time = 0.0;
  VectorX winding;

  LoopState(SpectralGrid g, Eigen::MatrixXd p, double t = 0.0, std::optional<VectorX> w = std::nullopt)
      : grid(std::move(g)), points(std::move(p)), time(t),
        winding(w ? *w : VectorX::Zero(points.rows())) {}

  int size() const { return grid.size(); }
  VectorX point(int j) const { return points.col(j); }
  bool winds() const { return winding.size() > 0 && winding.norm() > 0.0; }
};

inline constexpr double kStabilityConstant = 0.2;
inline constexpr double kPaddingFraction = 0.1;
inline constexpr double kPaddingTolerance = 1e-8;

inline double stability_limit(const SpectralGrid& grid) {
  return kStabilityConstant * grid.dx() * grid.dx();
}

/// Spectral u_x (and optionally u_xx) of the lifted loop.
inline Eigen::MatrixXd loop_derivative(const LoopState& loop) {
  const int n = loop.size();
  if (!loop.winds()) return loop.grid.derivative_rows(loop.points, 1);
  Eigen::MatrixXd lifted = loop.points;
  for (int j = 0; j < n; ++j) lifted.col(j) -= loop.winding * loop.grid.x(j);
  Eigen::MatrixXd d = loop.grid.derivative_rows(lifted, 1);
  d.colwise() += loop.winding;
  return d;
}

inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> loop_derivatives12(const SpectralGrid& grid,
                                                                      const Eigen::MatrixXd& points,
                                                                      const VectorX& winding) {
  if (winding.size() == 0 || winding.norm() == 0.0) return grid.derivative_rows12(points);
  Eigen::MatrixXd lifted = points;
  for (int j = 0; j < grid.size(); ++j) lifted.col(j) -= winding * grid.x(j);
  auto d = grid.derivative_rows12(lifted);
  d.first.colwise() += winding;
  return d;
}

/// Checks the LoopState invariants; throws DomainError describing the first
/// violation.
inline void validate_loop(const SurfaceModel& surface, const LoopState& loop) {
  if (loop.points.rows() != surface.ambient_dimension())
    throw DomainError("loop dimension does not match the surface");
  if (loop.points.cols() != loop.size()) throw DomainError("loop sample count does not match grid");
  for (int j = 0; j < loop.size(); ++j) {
    if (!surface.on_manifold(loop.points.col(j)))
      throw DomainError("loop sample " + std::to_string(j) + " is off the target manifold");
  }
  if (!loop.grid.is_circle()) {
    if (loop.winds()) throw DomainError("line-domain maps cannot wind");
    const Eigen::MatrixXd ux = loop_derivative(loop);
    const int pad = std::max(1, static_cast<int>(std::floor(kPaddingFraction * loop.size() / 2.0)));
    for (int j = 0; j < loop.size(); ++j) {
      if (j >= pad && j < loop.size() - pad) continue;
      const double speed = surface.norm(loop.points.col(j), ux.col(j));
      if (speed > kPaddingTolerance)
        throw DomainError("line-domain map does not decay in the padding region (|u_x| = " +
                          std::to_string(speed) + ")");
    }
  }
}

namespace detail {

// tau and -J tau from spectral derivatives.
inline void tension_and_rhs(const SurfaceModel& surface, const Eigen::MatrixXd& points,
                            const Eigen::MatrixXd& d1, const Eigen::MatrixXd& d2, Eigen::MatrixXd* tau,
                            Eigen::MatrixXd* rhs) {
  const int n = static_cast<int>(points.cols());
  for (int j = 0; j < n; ++j) {
    for (int f = 0; f < surface.complex_dimension(); ++f) {
      const auto& fac = surface.factor(f);
      const Vector3 p = points.block<3, 1>(3 * f, j);
      const Vector3 ux = d1.block<3, 1>(3 * f, j);
      const Vector3 t = fac.tangent_part(p, Vector3(d2.block<3, 1>(3 * f, j)) + fac.connection(p, ux, ux));
      if (tau) tau->block<3, 1>(3 * f, j) = t;
      if (rhs) rhs->block<3, 1>(3 * f, j) = -fac.complex_structure(p, t);
    }
  }
}

}  // namespace detail

/// Tension field tau(u) = tr nabla du at each sample.
inline Eigen::MatrixXd tension(const SurfaceModel& surface, const LoopState& loop) {
  const auto [d1, d2] = loop_derivatives12(loop.grid, loop.points, loop.winding);
  Eigen::MatrixXd tau(loop.points.rows(), loop.size());
  detail::tension_and_rhs(surface, loop.points, d1, d2, &tau, nullptr);
  return tau;
}

/// -J tau(u) at each sample.
inline Eigen::MatrixXd flow_rhs(const SurfaceModel& surface, const LoopState& loop) {
  const auto [d1, d2] = loop_derivatives12(loop.grid, loop.points, loop.winding);
  Eigen::MatrixXd rhs(loop.points.rows(), loop.size());
  detail::tension_and_rhs(surface, loop.points, d1, d2, nullptr, &rhs);
  return rhs;
}

/// E(u) = 1/2 int h(u_x, u_x) dx.
inline double energy(const SurfaceModel& surface, const LoopState& loop) {
  const Eigen::MatrixXd ux = loop_derivative(loop);
  double s = 0.0;
  for (int j = 0; j < loop.size(); ++j) s += surface.metric(loop.points.col(j), ux.col(j), ux.col(j));
  return 0.5 * s * loop.grid.dx();
}

/// Tangent vectors carried along t -> u(t, x_base) by parallel transport in
/// time. Used for the frame seed of the coupled reduction.
struct CarriedVectors {
  int base = 0;
  Eigen::MatrixXd vectors;  // ambient x k
};

/// One RK4 step of size dt (negative dt integrates backwards). Sphere factors
/// are renormalized after the step. Throws RejectedStep when |dt| exceeds
/// 0.2 dx^2 and BlowUpSuspected on non-finite output.
inline LoopState step(const SurfaceModel& surface, const LoopState& loop, double dt,
                      CarriedVectors* carried = nullptr) {
  const double limit = stability_limit(loop.grid);
  if (std::abs(dt) > limit * (1.0 + 1e-12))
    throw RejectedStep("time step " + std::to_string(dt) + " exceeds stability limit 0.2 dx^2", limit);
  if (dt == 0.0) return loop;

  const int n = loop.size();
  const Eigen::Index rows = loop.points.rows();
  auto rhs_of = [&](const Eigen::MatrixXd& pts) {
    const auto [d1, d2] = loop_derivatives12(loop.grid, pts, loop.winding);
    Eigen::MatrixXd r(rows, n);
    detail::tension_and_rhs(surface, pts, d1, d2, nullptr, &r);
    return r;
  };
  auto carry_rate = [&](const Eigen::MatrixXd& pts, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v) {
    Eigen::MatrixXd out(v.rows(), v.cols());
    const VectorX p = pts.col(carried->base), d = k.col(carried->base);
    for (Eigen::Index c = 0; c < v.cols(); ++c) out.col(c) = surface.transport_velocity(p, d, v.col(c));
    return out;
  };

  const Eigen::MatrixXd& u0 = loop.points;
  const Eigen::MatrixXd k1 = rhs_of(u0);
  const Eigen::MatrixXd u1 = u0 + 0.5 * dt * k1;
  const Eigen::MatrixXd k2 = rhs_of(u1);
  const Eigen::MatrixXd u2 = u0 + 0.5 * dt * k2;
  const Eigen::MatrixXd k3 = rhs_of(u2);
  const Eigen::MatrixXd u3 = u0 + dt * k3;
  const Eigen::MatrixXd k4 = rhs_of(u3);

  LoopState out = loop;
  out.points = u0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  out.time = loop.time + dt;
  for (int j = 0; j < n; ++j) out.points.col(j) = surface.retract(out.points.col(j));
  if (!out.points.allFinite()) {
    std::ostringstream os;
    os << "t=" << loop.time << " dt=" << dt << " N=" << n
       << " max|u_t|=" << k1.cwiseAbs().maxCoeff() << "; refine the grid or reduce dt";
    throw BlowUpSuspected("non-finite state in direct flow step", os.str());
  }

  if (carried) {
    const Eigen::MatrixXd& v0 = carried->vectors;
    const Eigen::MatrixXd c1 = carry_rate(u0, k1, v0);
    const Eigen::MatrixXd c2 = carry_rate(u1, k2, v0 + 0.5 * dt * c1);
    const Eigen::MatrixXd c3 = carry_rate(u2, k3, v0 + 0.5 * dt * c2);
    const Eigen::MatrixXd c4 = carry_rate(u3, k4, v0 + dt * c3);
    Eigen::MatrixXd v1 = v0 + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4);
    const VectorX pb = out.points.col(carried->base);
    for (Eigen::Index c = 0; c < v1.cols(); ++c) v1.col(c) = surface.tangent_part(pb, v1.col(c));
    if (v1.cols() == 2 * surface.complex_dimension()) unitarize_frame(surface, pb, v1);
    carried->vectors = v1;
  }
  return out;
}

/// Advances by `steps` steps of size dt.
inline LoopState advance(const SurfaceModel& surface, LoopState loop, double dt, int steps,
                         CarriedVectors* carried = nullptr) {
  for (int k = 0; k < steps; ++k) loop = step(surface, loop, dt, carried);
  return loop;
}

// ---------------------------------------------------------------------------
// Initial data

/// Unit-sphere point at colatitude th and longitude ph.
inline Vector3 sphere_point(double th, double ph) {
  return Vector3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th));
}

namespace detail {

template <class F>
LoopState build_loop(const SurfaceModel& surface, const SpectralGrid& grid, F&& per_factor,
                     VectorX winding = VectorX()) {
  Eigen::MatrixXd pts(surface.ambient_dimension(), grid.size());
  for (int j = 0; j < grid.size(); ++j)
    for (int f = 0; f < surface.complex_dimension(); ++f)
      pts.block<3, 1>(3 * f, j) = per_factor(surface.factor(f), f, grid.x(j));
  if (winding.size() == 0) winding = VectorX::Zero(pts.rows());
  LoopState loop(grid, std::move(pts), 0.0, winding);
  validate_loop(surface, loop);
  return loop;
}

// Chart models interpret colatitude-style parameters as circles of Euclidean
// radius 0.5 sin(alpha) about the origin.
inline Vector3 chart_circle(double radius, double x) {
  return Vector3(radius * std::cos(kTwoPi * x), radius * std::sin(kTwoPi * x), 0.0);
}

}  // namespace detail

inline LoopState constant_loop(const SurfaceModel& surface, const SpectralGrid& grid) {
  return detail::build_loop(surface, grid, [](const SurfaceFactor& fac, int, double) -> Vector3 {
    if (fac.embedded()) return fac.radius() * sphere_point(1.0, 0.3);
    return Vector3(0.1, -0.2, 0.0);
  });
}

/// Great circle u(x) = R(cos 2 pi x, sin 2 pi x, 0); on a flat torus the
/// closed geodesic winding once in the first direction.
inline LoopState great_circle(const SurfaceModel& surface, const SpectralGrid& grid) {
  if (!grid.is_circle()) throw DomainError("great_circle needs the circle domain");
  VectorX winding = VectorX::Zero(surface.ambient_dimension());
  for (int f = 0; f < surface.complex_dimension(); ++f) {
    const auto& fac = surface.factor(f);
    if (fac.kind() == FactorKind::HyperbolicDisk)
      throw DomainError("the hyperbolic disk has no closed geodesics");
    if (fac.kind() == FactorKind::FlatTorus) winding[3 * f] = fac.period();
  }
  return detail::build_loop(
      surface, grid,
      [](const SurfaceFactor& fac, int, double x) -> Vector3 {
        if (fac.embedded()) return fac.radius() * sphere_point(kPi / 2, kTwoPi * x);
        return Vector3(fac.period() * x, 0.0, 0.0);
      },
      winding);
}

/// Latitude circle at colatitude alpha.
inline LoopState latitude(const SurfaceModel& surface, const SpectralGrid& grid, double alpha) {
  if (!grid.is_circle()) throw DomainError("latitude needs the circle domain");
  return detail::build_loop(surface, grid, [&](const SurfaceFactor& fac, int, double x) -> Vector3 {
    if (fac.embedded()) return fac.radius() * sphere_point(alpha, kTwoPi * x);
    return detail::chart_circle(0.5 * std::sin(alpha), x);
  });
}

/// Latitude with colatitude alpha + eps sin(2 pi mode x).
inline LoopState perturbed_latitude(const SurfaceModel& surface, const SpectralGrid& grid, double alpha,
                                    double eps, int mode) {
  if (!grid.is_circle()) throw DomainError("perturbed_latitude needs the circle domain");
  return detail::build_loop(surface, grid, [&](const SurfaceFactor& fac, int, double x) -> Vector3 {
    const double a = alpha + eps * std::sin(kTwoPi * mode * x);
    if (fac.embedded()) return fac.radius() * sphere_point(a, kTwoPi * x);
    return detail::chart_circle(0.5 * std::sin(a), x);
  });
}

/// One real Fourier term: a cos(2 pi m x) + b sin(2 pi m x) per factor block.
struct FourierTerm {
  int mode = 0;
  VectorX cos_amplitude;
  VectorX sin_amplitude;
};

/// Loop assembled from Fourier terms and then retracted onto the target.
inline LoopState fourier_loop(const SurfaceModel& surface, const SpectralGrid& grid,
                              const std::vector<FourierTerm>& terms) {
  if (!grid.is_circle()) throw DomainError("fourier init needs the circle domain");
  const int dim = surface.ambient_dimension();
  for (const auto& t : terms)
    if (t.cos_amplitude.size() != dim || t.sin_amplitude.size() != dim)
      throw DomainError("fourier term amplitude has the wrong dimension");
  Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(dim, grid.size());
  for (int j = 0; j < grid.size(); ++j) {
    VectorX v = VectorX::Zero(dim);
    for (const auto& t : terms)
      v += t.cos_amplitude * std::cos(kTwoPi * t.mode * grid.x(j)) +
           t.sin_amplitude * std::sin(kTwoPi * t.mode * grid.x(j));
    for (int f = 0; f < surface.complex_dimension(); ++f) {
      if (surface.factor(f).embedded() && v.segment<3>(3 * f).norm() < 1e-8)
        throw DomainError("fourier loop passes through the origin; cannot project to the sphere");
    }
    pts.col(j) = surface.retract(v);
  }
  LoopState loop(grid, std::move(pts));
  validate_loop(surface, loop);
  return loop;
}

/// Localized line-domain profile: colatitude amplitude*exp(-x^2/width^2) and
/// longitude x (chart models: the same profile as a planar curve).
inline LoopState pulse(const SurfaceModel& surface, const SpectralGrid& grid, double amplitude, double width) {
  if (grid.is_circle()) throw DomainError("pulse init needs the line domain");
  return detail::build_loop(surface, grid, [&](const SurfaceFactor& fac, int, double x) -> Vector3 {
    const double th = amplitude * std::exp(-x * x / (width * width));
    if (fac.embedded()) return fac.radius() * sphere_point(th, x);
    return Vector3(0.5 * std::sin(th) * std::cos(x), 0.5 * std::sin(th) * std::sin(x), 0.0);
  });
}

/// Exact precessing latitude solution on a round sphere: rigid rotation about
/// z by angle 4 pi^2 cos(alpha) t.
inline LoopState precessing_latitude(const SurfaceModel& surface, const SpectralGrid& grid, double alpha,
                                     double t) {
  const double omega = 4.0 * kPi * kPi * std::cos(alpha);
  LoopState loop = detail::build_loop(surface, grid, [&](const SurfaceFactor& fac, int, double x) -> Vector3 {
    if (fac.kind() != FactorKind::RoundSphere)
      throw UnsupportedOperation("precessing latitude is exact only on round spheres");
    return fac.radius() * sphere_point(alpha, kTwoPi * x + omega * t);
  });
  loop.time = t;
  return loop;
}

/// Largest pointwise Euclidean distance between two loops.
inline double sup_distance(const LoopState& a, const LoopState& b) {
  return (a.points - b.points).colwise().norm().maxCoeff();
}

}  // namespace smflow
