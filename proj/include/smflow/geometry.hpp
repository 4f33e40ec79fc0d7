#pragma once

// Target surfaces and their Kähler data.
//
// Every model is a finite product of surface factors. Each factor stores its
// points and tangent vectors as Vector3: round and warped spheres are embedded
// in R^3, while the flat torus and the hyperbolic disk are chart models whose
// third component is identically zero. All four factor metrics are conformal
// to the Euclidean metric of that representation, h = e^{2 lambda} <.,.>, so
// the complex structure is the same rotation by a right angle everywhere
// (p x v on spheres, (x, y) -> (-y, x) in charts).

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "smflow/errors.hpp"
#include "smflow/spectral.hpp"

namespace smflow {

using Vector3 = Eigen::Vector3d;
using VectorX = Eigen::VectorXd;

inline constexpr double kEmbeddingTolerance = 1e-10;

/// Conformal factor lambda on the unit sphere, given on a neighbourhood in R^3
/// together with its ambient gradient.
struct WarpProfile {
  std::function<double(const Vector3&)> value;
  std::function<Vector3(const Vector3&)> gradient;
  std::function<Eigen::Matrix3d(const Vector3&)> hessian;  // optional
  std::string label;

  /// lambda(p) = amplitude * exp(-|p - c|^2 / (2 width^2)), with c the unit
  /// vector at the given colatitude in the x-z plane.
  static WarpProfile bump(double amplitude, double width, double center_colatitude) {
    const Vector3 c(std::sin(center_colatitude), 0.0, std::cos(center_colatitude));
    const double inv = 1.0 / (2.0 * width * width);
    WarpProfile w;
    w.value = [=](const Vector3& p) { return amplitude * std::exp(-(p - c).squaredNorm() * inv); };
    w.gradient = [=](const Vector3& p) -> Vector3 {
      const double v = amplitude * std::exp(-(p - c).squaredNorm() * inv);
      return -2.0 * inv * v * (p - c);
    };
    w.hessian = [=](const Vector3& p) -> Eigen::Matrix3d {
      const Vector3 d = p - c;
      const double v = amplitude * std::exp(-d.squaredNorm() * inv);
      return -2.0 * inv * v * Eigen::Matrix3d::Identity() + 4.0 * inv * inv * v * d * d.transpose();
    };
    w.label = "bump(" + std::to_string(amplitude) + "," + std::to_string(width) + "," +
              std::to_string(center_colatitude) + ")";
    return w;
  }
};

enum class FactorKind { RoundSphere, WarpedSphere, HyperbolicDisk, FlatTorus };

/// Christoffel symbols Gamma^k_{ij} of a surface factor in its declared chart:
/// (colatitude, longitude) for spheres, the identity chart otherwise.
using Christoffel2 = std::array<std::array<std::array<double, 2>, 2>, 2>;

/// One surface factor. Immutable after construction.
class SurfaceFactor {
 public:
  static SurfaceFactor round_sphere(double radius = 1.0) {
    if (!(radius > 0.0)) throw DomainError("sphere radius must be positive");
    SurfaceFactor f(FactorKind::RoundSphere);
    f.radius_ = radius;
    return f;
  }
  static SurfaceFactor warped_sphere(WarpProfile warp) {
    SurfaceFactor f(FactorKind::WarpedSphere);
    f.warp_ = std::make_shared<const WarpProfile>(std::move(warp));
    return f;
  }
  static SurfaceFactor hyperbolic_disk() { return SurfaceFactor(FactorKind::HyperbolicDisk); }
  static SurfaceFactor flat_torus(double period = 1.0) {
    SurfaceFactor f(FactorKind::FlatTorus);
    f.period_ = period;
    return f;
  }

  FactorKind kind() const { return kind_; }
  bool embedded() const {
    return kind_ == FactorKind::RoundSphere || kind_ == FactorKind::WarpedSphere;
  }
  double radius() const { return radius_; }
  double period() const { return period_; }
  const WarpProfile* warp() const { return warp_.get(); }

  std::string name() const {
    switch (kind_) {
      case FactorKind::RoundSphere: return "round_sphere";
      case FactorKind::WarpedSphere: return "warped_sphere";
      case FactorKind::HyperbolicDisk: return "hyperbolic_disk";
      case FactorKind::FlatTorus: return "flat_torus";
    }
    return "unknown";
  }

  /// Length scale used for resolution checks.
  double scale() const { return embedded() ? radius_ : 1.0; }

  bool on_manifold(const Vector3& p, double tol = kEmbeddingTolerance) const {
    if (!p.allFinite()) return false;
    switch (kind_) {
      case FactorKind::RoundSphere:
      case FactorKind::WarpedSphere:
        return std::abs(p.norm() - radius_) <= tol * std::max(1.0, radius_);
      case FactorKind::HyperbolicDisk:
        return std::abs(p.z()) <= tol && p.head<2>().squaredNorm() < 1.0;
      case FactorKind::FlatTorus: return std::abs(p.z()) <= tol;
    }
    return false;
  }

  void require_on_manifold(const Vector3& p) const {
    if (!on_manifold(p)) throw DomainError("point is not on the " + name());
  }

  Vector3 retract(const Vector3& p) const {
    if (embedded()) return p * (radius_ / p.norm());
    return Vector3(p.x(), p.y(), 0.0);
  }

  Vector3 normal(const Vector3& p) const { return p / p.norm(); }

  /// Removes the normal component on spheres; identity on charts.
  Vector3 tangent_part(const Vector3& p, const Vector3& w) const {
    if (embedded()) {
      const Vector3 n = normal(p);
      return w - w.dot(n) * n;
    }
    return Vector3(w.x(), w.y(), 0.0);
  }

  /// lambda in h = e^{2 lambda} <.,.>.
  double conformal_log(const Vector3& p) const {
    switch (kind_) {
      case FactorKind::WarpedSphere: return warp_->value(p);
      case FactorKind::HyperbolicDisk:
        return std::log(2.0 / (1.0 - p.head<2>().squaredNorm()));
      default: return 0.0;
    }
  }

  /// Gradient of lambda, tangential on spheres.
  Vector3 conformal_gradient(const Vector3& p) const {
    switch (kind_) {
      case FactorKind::WarpedSphere: return tangent_part(p, warp_->gradient(p));
      case FactorKind::HyperbolicDisk: {
        const double r2 = p.head<2>().squaredNorm();
        return Vector3(2.0 * p.x() / (1.0 - r2), 2.0 * p.y() / (1.0 - r2), 0.0);
      }
      default: return Vector3::Zero();
    }
  }

  double metric_scale(const Vector3& p) const {
    switch (kind_) {
      case FactorKind::WarpedSphere: return std::exp(2.0 * warp_->value(p));
      case FactorKind::HyperbolicDisk: {
        const double s = 2.0 / (1.0 - p.head<2>().squaredNorm());
        return s * s;
      }
      default: return 1.0;
    }
  }

  double metric(const Vector3& p, const Vector3& v, const Vector3& w) const {
    return metric_scale(p) * v.dot(w);
  }

  Vector3 complex_structure(const Vector3& p, const Vector3& v) const {
    if (embedded()) return normal(p).cross(v);
    return Vector3(-v.y(), v.x(), 0.0);
  }

  /// Symmetric correction Gamma(X, Y) such that the covariant derivative of a
  /// tangent field V along a curve with velocity X is V' + Gamma(X, V). On
  /// spheres it includes the normal term that keeps V tangent.
  Vector3 connection(const Vector3& p, const Vector3& x, const Vector3& y) const {
    Vector3 out = Vector3::Zero();
    if (embedded()) out += (x.dot(y) / p.squaredNorm()) * p;
    if (kind_ == FactorKind::WarpedSphere || kind_ == FactorKind::HyperbolicDisk) {
      const Vector3 g = conformal_gradient(p);
      const Vector3 graw = kind_ == FactorKind::WarpedSphere ? warp_->gradient(p) : g;
      out += graw.dot(x) * y + graw.dot(y) * x - x.dot(y) * g;
    }
    return out;
  }

  /// Gaussian curvature. Warped spheres use K = e^{-2 lambda}(1 - Delta lambda)
  /// with the ambient Hessian of lambda (centred differences of the gradient
  /// when the profile has no Hessian).
  double curvature(const Vector3& p) const {
    switch (kind_) {
      case FactorKind::RoundSphere: return 1.0 / (radius_ * radius_);
      case FactorKind::HyperbolicDisk: return -1.0;
      case FactorKind::FlatTorus: return 0.0;
      case FactorKind::WarpedSphere: {
        const Vector3 n = p / p.norm();
        Eigen::Matrix3d hess;
        if (warp_->hessian) {
          hess = warp_->hessian(p);
        } else {
          const double h = 1e-4;
          for (int i = 0; i < 3; ++i) {
            Vector3 e = Vector3::Zero();
            e[i] = h;
            hess.col(i) = (warp_->gradient(p + e) - warp_->gradient(p - e)) / (2.0 * h);
          }
          hess = 0.5 * (hess + hess.transpose()).eval();
        }
        const Vector3 grad = warp_->gradient(p);
        const double lap = hess.trace() - n.dot(hess * n) - 2.0 * grad.dot(n);
        return std::exp(-2.0 * warp_->value(p)) * (1.0 - lap);
      }
    }
    return 0.0;
  }

  /// Ambient representative G of dK, i.e. dK(X) = G . X for tangent X.
  Vector3 curvature_gradient(const Vector3& p) const {
    if (kind_ != FactorKind::WarpedSphere) return Vector3::Zero();
    const Vector3 n = p / p.norm();
    Vector3 t1 = n.cross(Vector3::UnitX());
    if (t1.norm() < 0.5) t1 = n.cross(Vector3::UnitY());
    t1.normalize();
    const Vector3 t2 = n.cross(t1);
    const double h = 2e-3;
    const double r = p.norm();
    Vector3 g = Vector3::Zero();
    for (const Vector3& t : {t1, t2}) {
      auto k = [&](double s) { return curvature(r * (std::cos(s) * n + std::sin(s) * t)); };
      g += (8.0 * (k(h) - k(-h)) - (k(2 * h) - k(-2 * h))) / (12.0 * h * r) * t;
    }
    return g;
  }

  /// Christoffel symbols in the declared chart at p.
  Christoffel2 christoffel(const Vector3& p) const {
    Christoffel2 g{};
    if (!embedded()) {
      if (kind_ == FactorKind::HyperbolicDisk) {
        const Vector3 d = conformal_gradient(p);
        add_conformal(g, {d.x(), d.y()}, {1.0, 1.0});
      }
      return g;
    }
    const double r = p.norm();
    const double th = std::acos(std::clamp(p.z() / r, -1.0, 1.0));
    const double ph = std::atan2(p.y(), p.x());
    const double s = std::sin(th), c = std::cos(th);
    if (s < 1e-6) throw SingularChartError("colatitude-longitude chart is singular at the poles");
    g[0][1][1] = -s * c;
    g[1][0][1] = c / s;
    g[1][1][0] = c / s;
    if (kind_ == FactorKind::WarpedSphere) {
      const Vector3 dth(c * std::cos(ph), c * std::sin(ph), -s);
      const Vector3 dph(-s * std::sin(ph), s * std::cos(ph), 0.0);
      const Vector3 grad = warp_->gradient(p);
      add_conformal(g, {grad.dot(dth), grad.dot(dph)}, {1.0, s * s});
    }
    return g;
  }

 private:
  explicit SurfaceFactor(FactorKind k) : kind_(k) {}

  // Gamma^k_ij += delta^k_i d_j + delta^k_j d_i - g_ij g^kk d_k for a diagonal
  // base metric g.
  static void add_conformal(Christoffel2& g, std::array<double, 2> d, std::array<double, 2> gd) {
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          double v = 0.0;
          if (k == i) v += d[j];
          if (k == j) v += d[i];
          if (i == j) v -= gd[i] / gd[k] * d[k];
          g[k][i][j] += v;
        }
  }

  FactorKind kind_;
  double radius_ = 1.0;
  double period_ = 1.0;
  std::shared_ptr<const WarpProfile> warp_;
};

/// Product of surface factors (a single surface is a product of one).
/// Points and tangent vectors are stacked Vector3 blocks, one per factor.
class SurfaceModel {
 public:
  explicit SurfaceModel(SurfaceFactor f) : factors_{std::move(f)} {}
  explicit SurfaceModel(std::vector<SurfaceFactor> fs) : factors_(std::move(fs)) {
    if (factors_.empty()) throw DomainError("surface model needs at least one factor");
  }

  static SurfaceModel round_sphere(double radius = 1.0) {
    return SurfaceModel(SurfaceFactor::round_sphere(radius));
  }
  static SurfaceModel warped_sphere(WarpProfile w) {
    return SurfaceModel(SurfaceFactor::warped_sphere(std::move(w)));
  }
  static SurfaceModel hyperbolic_disk() { return SurfaceModel(SurfaceFactor::hyperbolic_disk()); }
  static SurfaceModel flat_torus(double period = 1.0) {
    return SurfaceModel(SurfaceFactor::flat_torus(period));
  }

  /// Complex dimension n (number of factors).
  int complex_dimension() const { return static_cast<int>(factors_.size()); }
  int ambient_dimension() const { return 3 * complex_dimension(); }
  const SurfaceFactor& factor(int f) const { return factors_[f]; }
  const std::vector<SurfaceFactor>& factors() const { return factors_; }
  bool embedded() const {
    for (const auto& f : factors_)
      if (!f.embedded()) return false;
    return true;
  }

  static Vector3 block(const VectorX& v, int f) { return v.segment<3>(3 * f); }

  bool on_manifold(const VectorX& p, double tol = kEmbeddingTolerance) const {
    if (p.size() != ambient_dimension()) return false;
    for (int f = 0; f < complex_dimension(); ++f)
      if (!factors_[f].on_manifold(block(p, f), tol)) return false;
    return true;
  }
  void require_on_manifold(const VectorX& p) const {
    if (!on_manifold(p)) throw DomainError("point is off the target manifold");
  }

  VectorX retract(const VectorX& p) const {
    VectorX out(p.size());
    for (int f = 0; f < complex_dimension(); ++f)
      out.segment<3>(3 * f) = factors_[f].retract(block(p, f));
    return out;
  }

  double metric(const VectorX& p, const VectorX& v, const VectorX& w) const {
    double s = 0.0;
    for (int f = 0; f < complex_dimension(); ++f)
      s += factors_[f].metric(block(p, f), block(v, f), block(w, f));
    return s;
  }
  double norm(const VectorX& p, const VectorX& v) const { return std::sqrt(metric(p, v, v)); }

  VectorX complex_structure(const VectorX& p, const VectorX& v) const {
    VectorX out(v.size());
    for (int f = 0; f < complex_dimension(); ++f)
      out.segment<3>(3 * f) = factors_[f].complex_structure(block(p, f), block(v, f));
    return out;
  }

  VectorX connection(const VectorX& p, const VectorX& x, const VectorX& y) const {
    VectorX out(x.size());
    for (int f = 0; f < complex_dimension(); ++f)
      out.segment<3>(3 * f) = factors_[f].connection(block(p, f), block(x, f), block(y, f));
    return out;
  }

  /// Tangential cleanup usable on every model (identity in charts).
  VectorX tangent_part(const VectorX& p, const VectorX& w) const {
    VectorX out(w.size());
    for (int f = 0; f < complex_dimension(); ++f)
      out.segment<3>(3 * f) = factors_[f].tangent_part(block(p, f), block(w, f));
    return out;
  }

  /// dV/ds for V parallel along a curve through p with velocity dp.
  VectorX transport_velocity(const VectorX& p, const VectorX& dp, const VectorX& v) const {
    return -connection(p, dp, v);
  }

  /// Gaussian curvature of factor f at the factor block of p.
  double curvature(const VectorX& p, int f = 0) const {
    const Vector3 q = block(p, f);
    factors_[f].require_on_manifold(q);
    return factors_[f].curvature(q);
  }

  Vector3 curvature_gradient(const VectorX& p, int f = 0) const {
    const Vector3 q = block(p, f);
    factors_[f].require_on_manifold(q);
    return factors_[f].curvature_gradient(q);
  }

  Christoffel2 christoffel(const VectorX& p, int f = 0) const {
    return factors_[f].christoffel(block(p, f));
  }

  std::string description() const {
    std::string s;
    for (int f = 0; f < complex_dimension(); ++f) {
      if (f) s += " x ";
      s += factors_[f].name();
      if (factors_[f].kind() == FactorKind::WarpedSphere) s += "[" + factors_[f].warp()->label + "]";
    }
    return s;
  }

 private:
  std::vector<SurfaceFactor> factors_;
};

// ---------------------------------------------------------------------------
// Free operations

/// K(p) for factor f; rejects points off the manifold.
inline double curvature_at(const SurfaceModel& surface, const VectorX& p, int f = 0) {
  return surface.curvature(p, f);
}

/// Gamma^k_{ij}(p) of factor f in its declared chart.
inline Christoffel2 christoffel_at(const SurfaceModel& surface, const VectorX& p, int f = 0) {
  return surface.christoffel(p, f);
}

/// h-orthogonal projection of an ambient vector onto T_p N (embedded models only).
inline VectorX project_tangent(const SurfaceModel& surface, const VectorX& p, const VectorX& w) {
  if (!surface.embedded())
    throw UnsupportedOperation("tangent projection needs an embedded model");
  surface.require_on_manifold(p);
  return surface.tangent_part(p, w);
}

/// A path sampled at uniform parameter values. Closed paths hold N samples at
/// s = j/N and return to the first sample at s = 1; open paths hold N samples
/// at s = j/(N-1). Velocities are d/ds; when absent they are reconstructed
/// spectrally (closed) or by fourth-order differences (open). `winding` is the
/// lift offset u(s+1) - u(s) for loops that wrap around a torus factor.
struct SampledPath {
  Eigen::MatrixXd points;
  std::optional<Eigen::MatrixXd> velocities;
  bool closed = false;
  std::optional<VectorX> winding;

  int samples() const { return static_cast<int>(points.cols()); }
  int steps() const { return closed ? samples() : samples() - 1; }
};

/// Points and velocities at the nodes and midpoints of every path step.
struct PathStages {
  Eigen::MatrixXd points;      // 2*steps + 1 columns
  Eigen::MatrixXd velocities;  // same layout
  double step = 0.0;
};

namespace detail {

inline Eigen::MatrixXd open_path_velocities(const Eigen::MatrixXd& p, double h) {
  const int n = static_cast<int>(p.cols());
  Eigen::MatrixXd v(p.rows(), n);
  if (n < 5) {
    for (int j = 0; j < n; ++j) {
      const int a = std::max(0, j - 1), b = std::min(n - 1, j + 1);
      v.col(j) = (p.col(b) - p.col(a)) / ((b - a) * h);
    }
    return v;
  }
  for (int j = 0; j < n; ++j) {
    if (j >= 2 && j <= n - 3) {
      v.col(j) = (-p.col(j + 2) + 8.0 * p.col(j + 1) - 8.0 * p.col(j - 1) + p.col(j - 2)) / (12.0 * h);
    } else if (j < 2) {
      v.col(j) = (-25.0 * p.col(j) + 48.0 * p.col(j + 1) - 36.0 * p.col(j + 2) +
                  16.0 * p.col(j + 3) - 3.0 * p.col(j + 4)) / (12.0 * h);
    } else {
      v.col(j) = (25.0 * p.col(j) - 48.0 * p.col(j - 1) + 36.0 * p.col(j - 2) -
                  16.0 * p.col(j - 3) + 3.0 * p.col(j - 4)) / (12.0 * h);
    }
  }
  return v;
}

}  // namespace detail

/// Builds node and midpoint data for RK4 transport along the path.
inline PathStages path_stages(const SurfaceModel& surface, const SampledPath& path) {
  const int n = path.samples();
  const int steps = path.steps();
  PathStages st;
  st.points.resize(path.points.rows(), 2 * steps + 1);
  st.velocities.resize(path.points.rows(), 2 * steps + 1);
  if (steps <= 0) {
    st.points.col(0) = path.points.col(0);
    st.velocities.col(0).setZero();
    return st;
  }
  st.step = 1.0 / steps;
  if (path.closed) {
    const auto grid = SpectralGrid::circle(n);
    Eigen::MatrixXd lifted = path.points;
    VectorX w = path.winding.value_or(VectorX::Zero(path.points.rows()));
    for (int j = 0; j < n; ++j) lifted.col(j) -= w * grid.x(j);
    Eigen::MatrixXd fine = grid.refine_rows(lifted, 2);
    Eigen::MatrixXd vel = path.velocities ? grid.refine_rows(*path.velocities, 2)
                                          : grid.refine_rows(grid.derivative_rows(lifted, 1) +
                                                                 w * Eigen::RowVectorXd::Ones(n),
                                                             2);
    for (int j = 0; j < 2 * n; ++j) {
      st.points.col(j) = fine.col(j) + w * (0.5 * j / n);
      st.velocities.col(j) = vel.col(j);
    }
    st.points.col(2 * n) = path.points.col(0) + w;
    st.velocities.col(2 * n) = vel.col(0);
  } else {
    const double h = st.step;
    Eigen::MatrixXd vel = path.velocities ? *path.velocities
                                          : detail::open_path_velocities(path.points, h);
    for (int j = 0; j < n; ++j) {
      st.points.col(2 * j) = path.points.col(j);
      st.velocities.col(2 * j) = vel.col(j);
    }
    for (int j = 0; j < steps; ++j) {
      const VectorX &p0 = path.points.col(j), &p1 = path.points.col(j + 1);
      const VectorX &v0 = vel.col(j), &v1 = vel.col(j + 1);
      // Cubic Hermite at the midpoint, and its derivative.
      st.points.col(2 * j + 1) = 0.5 * (p0 + p1) + h / 8.0 * (v0 - v1);
      st.velocities.col(2 * j + 1) = 1.5 / h * (p1 - p0) - 0.25 * (v0 + v1);
    }
  }
  for (int j = 0; j < st.points.cols(); ++j) {
    st.points.col(j) = surface.retract(st.points.col(j));
    st.velocities.col(j) = surface.tangent_part(st.points.col(j), st.velocities.col(j));
  }
  return st;
}

/// Largest chord between consecutive samples, in h-length relative to the
/// factor scale.
inline double max_relative_step(const SurfaceModel& surface, const SampledPath& path) {
  double worst = 0.0;
  for (int j = 0; j < path.steps(); ++j) {
    const VectorX a = path.points.col(j);
    VectorX b = path.points.col((j + 1) % path.samples());
    if (path.closed && j + 1 == path.samples() && path.winding) b += *path.winding;
    for (int f = 0; f < surface.complex_dimension(); ++f) {
      const auto& fac = surface.factor(f);
      const Vector3 pa = SurfaceModel::block(a, f), pb = SurfaceModel::block(b, f);
      const double len = std::sqrt(fac.metric_scale(fac.retract(0.5 * (pa + pb)))) * (pb - pa).norm();
      worst = std::max(worst, len / fac.scale());
    }
  }
  return worst;
}

inline constexpr double kMaxRelativeStep = 0.5;

/// One classical RK4 transport step of several vectors between stage 2j and 2j+2.
inline void transport_step(const SurfaceModel& surface, const PathStages& st, int j,
                           Eigen::MatrixXd& vectors) {
  const double h = st.step;
  const VectorX p0 = st.points.col(2 * j), pm = st.points.col(2 * j + 1), p1 = st.points.col(2 * j + 2);
  const VectorX d0 = st.velocities.col(2 * j), dm = st.velocities.col(2 * j + 1),
                d1 = st.velocities.col(2 * j + 2);
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    const VectorX v = vectors.col(c);
    const VectorX k1 = surface.transport_velocity(p0, d0, v);
    const VectorX k2 = surface.transport_velocity(pm, dm, v + 0.5 * h * k1);
    const VectorX k3 = surface.transport_velocity(pm, dm, v + 0.5 * h * k2);
    const VectorX k4 = surface.transport_velocity(p1, d1, v + h * k3);
    vectors.col(c) = surface.tangent_part(p1, v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  }
}

/// Complex Gram-Schmidt on the first n columns of an (ambient x 2n) frame,
/// then e_{n+a} = J e_a.
inline void unitarize_frame(const SurfaceModel& surface, const VectorX& p, Eigen::MatrixXd& frame) {
  const int n = surface.complex_dimension();
  for (int a = 0; a < n; ++a) {
    VectorX e = frame.col(a);
    for (int b = 0; b < a; ++b) {
      e -= surface.metric(p, e, frame.col(b)) * frame.col(b) +
           surface.metric(p, e, frame.col(n + b)) * frame.col(n + b);
    }
    const double nrm = surface.norm(p, e);
    if (!(nrm > 0.0)) throw DomainError("degenerate frame");
    frame.col(a) = e / nrm;
    frame.col(n + a) = surface.complex_structure(p, frame.col(a));
  }
}

/// J-adapted h-orthonormal frame at p built from per-factor reference
/// directions that depend on p only.
inline Eigen::MatrixXd reference_frame(const SurfaceModel& surface, const VectorX& p) {
  const int n = surface.complex_dimension();
  Eigen::MatrixXd frame = Eigen::MatrixXd::Zero(surface.ambient_dimension(), 2 * n);
  for (int f = 0; f < n; ++f) {
    const auto& fac = surface.factor(f);
    const Vector3 q = SurfaceModel::block(p, f);
    Vector3 t = Vector3::UnitX();
    if (fac.embedded()) {
      const Vector3 nq = fac.normal(q);
      Eigen::Index k;
      nq.cwiseAbs().minCoeff(&k);
      t = nq.cross(Vector3::Unit(k));
    }
    frame.block<3, 1>(3 * f, f) = t;
  }
  unitarize_frame(surface, p, frame);
  return frame;
}

/// Parallel J-adapted frame along the path: columns of the result are the
/// transported frames at every sample (closed paths also get the frame after
/// the full loop as entry N). The frame is re-unitarized after every step.
inline std::vector<Eigen::MatrixXd> transport_frame(const SurfaceModel& surface, const SampledPath& path,
                                                    const Eigen::MatrixXd& frame0) {
  const int n = surface.complex_dimension();
  std::vector<Eigen::MatrixXd> out;
  out.reserve(path.steps() + 1);
  out.push_back(frame0);
  if (path.steps() <= 0) return out;
  if (max_relative_step(surface, path) > kMaxRelativeStep)
    throw ResolutionError("path step too large for transport");
  const PathStages st = path_stages(surface, path);
  Eigen::MatrixXd e = frame0.leftCols(n);
  Eigen::MatrixXd full(frame0.rows(), 2 * n);
  for (int j = 0; j < path.steps(); ++j) {
    transport_step(surface, st, j, e);
    const VectorX p1 = st.points.col(2 * j + 2);
    full.leftCols(n) = e;
    unitarize_frame(surface, p1, full);
    e = full.leftCols(n);
    out.push_back(full);
  }
  return out;
}

/// Parallel transport of v0 along the path. v0 is expanded in a reference
/// frame at the start; that frame is transported and v0 rebuilt from the same
/// real coordinates, so the map is exactly isometric and commutes with J.
/// For closed paths the result is the holonomy image.
inline VectorX parallel_transport(const SurfaceModel& surface, const SampledPath& path,
                                  const VectorX& v0) {
  if (path.samples() < 1) throw DomainError("empty path");
  const VectorX start = path.points.col(0);
  surface.require_on_manifold(start);
  const VectorX tangent = surface.tangent_part(start, v0);
  if ((tangent - v0).norm() > 1e-10 * std::max(1.0, v0.norm()))
    throw DomainError("initial vector is not tangent at the path start");
  if (path.steps() <= 0) return v0;
  bool constant = true;
  for (int j = 1; j < path.samples() && constant; ++j)
    constant = (path.points.col(j) - start).norm() == 0.0;
  if (constant && !path.winding) return v0;

  const Eigen::MatrixXd frame0 = reference_frame(surface, start);
  VectorX coords(frame0.cols());
  for (Eigen::Index c = 0; c < frame0.cols(); ++c) coords[c] = surface.metric(start, v0, frame0.col(c));
  const auto frames = transport_frame(surface, path, frame0);
  return frames.back() * coords;
}

}  // namespace smflow
