#pragma once

// Loop holonomy: connection-form integral, swept-area (Gauss-Bonnet) value,
// the time-derivative formula, and the ordered exponential for n >= 1.
//
// Conventions. Complex coefficients use i ~ J: for a J-adapted frame
// (e_1..e_n, Je_1..Je_n) a tangent vector v has coordinates
// c_a(v) = h(v, e_a) + i h(v, J e_a). A frame is moved by e' = e G with G
// complex n x n. The scalar lift theta is the rotation angle of the parallel
// frame after one loop, e(x + 1) = e^{i theta} e(x), so the coefficients obey
// Phi(x + 1) = e^{-i theta} Phi(x).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "smflow/errors.hpp"
#include "smflow/flow_direct.hpp"
#include "smflow/geometry.hpp"
#include "smflow/spectral.hpp"

namespace smflow {

using MatrixXcd = Eigen::MatrixXcd;
using VectorXcd = Eigen::VectorXcd;

/// Per-sample J-adapted frames (ambient x 2n each).
using FrameSamples = std::vector<Eigen::MatrixXd>;

/// Complex coordinates of v in a J-adapted frame.
inline VectorXcd complex_coordinates(const SurfaceModel& surface, const VectorX& p,
                                     const Eigen::MatrixXd& frame, const VectorX& v) {
  const int n = surface.complex_dimension();
  VectorXcd c(n);
  for (int a = 0; a < n; ++a) c[a] = cplx(surface.metric(p, v, frame.col(a)), surface.metric(p, v, frame.col(n + a)));
  return c;
}

/// Periodic frame field built from the unit tangent of each factor. Throws
/// DomainError where a factor's velocity vanishes.
inline FrameSamples tangent_frame_field(const SurfaceModel& surface, const LoopState& loop) {
  const int n = surface.complex_dimension();
  const Eigen::MatrixXd ux = loop_derivative(loop);
  FrameSamples out(loop.size());
  for (int j = 0; j < loop.size(); ++j) {
    Eigen::MatrixXd fr = Eigen::MatrixXd::Zero(surface.ambient_dimension(), 2 * n);
    const VectorX p = loop.points.col(j);
    for (int f = 0; f < n; ++f) {
      const auto& fac = surface.factor(f);
      const Vector3 q = p.segment<3>(3 * f);
      const Vector3 v = ux.block<3, 1>(3 * f, j);
      const double speed = std::sqrt(fac.metric(q, v, v));
      if (!(speed > 1e-9)) throw DomainError("tangent frame undefined where the loop is stationary");
      fr.block<3, 1>(3 * f, f) = v / speed;
      fr.block<3, 1>(3 * f, n + f) = fac.complex_structure(q, v / speed);
    }
    out[j] = std::move(fr);
  }
  return out;
}

inline constexpr double kConnectionResolution = 1e-2;

/// Connection form C(x) of a periodic frame field f along the loop:
/// nabla_x f_a = sum_b f_b C_ba. Parallel frames e = f E solve E_x = -C E.
inline std::vector<MatrixXcd> connection_form(const SurfaceModel& surface, const LoopState& loop,
                                              const FrameSamples& field) {
  const int n = surface.complex_dimension();
  const int N = loop.size();
  const int dim = surface.ambient_dimension();
  const Eigen::MatrixXd ux = loop_derivative(loop);
  // Spectral derivative of every frame component.
  Eigen::MatrixXd rows(dim * n, N);
  for (int j = 0; j < N; ++j)
    for (int a = 0; a < n; ++a) rows.block(dim * a, j, dim, 1) = field[j].col(a);
  const Eigen::MatrixXd drows = loop.grid.derivative_rows(rows, 1);
  std::vector<MatrixXcd> C(N, MatrixXcd::Zero(n, n));
  for (int j = 0; j < N; ++j) {
    const VectorX p = loop.points.col(j);
    for (int a = 0; a < n; ++a) {
      VectorX cov = drows.block(dim * a, j, dim, 1);
      cov += surface.connection(p, ux.col(j), field[j].col(a));
      C[j].col(a) = complex_coordinates(surface, p, field[j], cov);
    }
    // The Hermitian part is truncation error of the spectral derivative.
    const MatrixXcd herm = 0.5 * (C[j] + C[j].adjoint());
    if (herm.norm() > kConnectionResolution * std::max(1.0, C[j].norm()))
      throw ResolutionError("frame field under-resolved: connection form far from anti-Hermitian");
    C[j] -= herm;
  }
  return C;
}

/// Nearest 2 pi branch of `value` relative to `previous`.
inline double continue_lift(double previous, double value) {
  return value + kTwoPi * std::round((previous - value) / kTwoPi);
}

struct HolonomyValue {
  double theta = 0.0;  // lift
  cplx phase = 1.0;    // e^{i theta}
};

/// Scalar holonomy of a loop into a surface (n = 1) from the connection form
/// of the unit-tangent frame: theta = 2 pi - int omega, omega = h(nabla_x f, J f).
/// A stationary loop has theta = 0.
inline HolonomyValue holonomy_ode(const SurfaceModel& surface, const LoopState& loop) {
  if (surface.complex_dimension() != 1)
    throw UnsupportedOperation("scalar holonomy needs n = 1; use product_integral");
  if (!loop.grid.is_circle()) throw DomainError("holonomy needs a closed loop");
  const Eigen::MatrixXd ux = loop_derivative(loop);
  double max_speed = 0.0;
  for (int j = 0; j < loop.size(); ++j)
    max_speed = std::max(max_speed, surface.norm(loop.points.col(j), ux.col(j)));
  if (max_speed == 0.0) return {};
  const auto C = connection_form(surface, loop, tangent_frame_field(surface, loop));
  double integral = 0.0;
  for (const auto& c : C) integral += c(0, 0).imag();
  integral *= loop.grid.dx();
  HolonomyValue out;
  out.theta = kTwoPi - integral;
  out.phase = std::polar(1.0, out.theta);
  return out;
}

/// theta_t = -1/2 int (K o u)_x |a|^2 dx with (K o u)_x = dK(u_x), |a|^2 = h(u_x, u_x).
inline double holonomy_rate(const SurfaceModel& surface, const LoopState& loop) {
  if (surface.complex_dimension() != 1) throw UnsupportedOperation("holonomy rate needs n = 1");
  const auto& fac = surface.factor(0);
  if (fac.kind() != FactorKind::WarpedSphere) return 0.0;
  const Eigen::MatrixXd ux = loop_derivative(loop);
  double s = 0.0;
  for (int j = 0; j < loop.size(); ++j) {
    const Vector3 p = loop.points.col(j), v = ux.col(j);
    s += fac.curvature_gradient(p).dot(v) * fac.metric(p, v, v);
  }
  return -0.5 * s * loop.grid.dx();
}

struct GaussBonnetResult {
  std::vector<double> theta;
  std::vector<std::string> warnings;
};

/// theta(t_k) = theta(0) + int_0^{t_k} int K h(J u_t, u_x) dx dt over the swept
/// surface u([0, t] x S^1). Velocities default to fourth-order differences of
/// the history; the time integral is the cumulative trapezoid rule.
inline GaussBonnetResult holonomy_gauss_bonnet(const SurfaceModel& surface, const std::vector<LoopState>& history,
                                               double theta0,
                                               const std::vector<Eigen::MatrixXd>* velocities = nullptr) {
  if (surface.complex_dimension() != 1) throw UnsupportedOperation("Gauss-Bonnet holonomy needs n = 1");
  GaussBonnetResult res;
  const int m = static_cast<int>(history.size());
  if (m == 0) return res;
  res.theta.assign(m, theta0);
  if (m == 1) return res;
  const auto& fac = surface.factor(0);
  std::vector<double> times(m);
  for (int k = 0; k < m; ++k) times[k] = history[k].time;

  auto velocity = [&](int k) -> Eigen::MatrixXd {
    if (velocities) return (*velocities)[k];
    auto d = [&](int i) { return history[i].points; };
    auto h = [&](int i, int j) { return times[j] - times[i]; };
    if (m >= 5 && k >= 2 && k <= m - 3) {
      const double hh = 0.25 * h(k - 2, k + 2);
      return (-d(k + 2) + 8.0 * d(k + 1) - 8.0 * d(k - 1) + d(k - 2)) / (12.0 * hh);
    }
    if (m >= 5) {
      const int s = k < 2 ? 1 : -1;
      const double hh = s * (k < 2 ? h(k, k + 1) : h(k - 1, k));
      return (-25.0 * d(k) + 48.0 * d(k + s) - 36.0 * d(k + 2 * s) + 16.0 * d(k + 3 * s) - 3.0 * d(k + 4 * s)) /
             (12.0 * hh);
    }
    const int a = std::max(0, k - 1), b = std::min(m - 1, k + 1);
    return (d(b) - d(a)) / h(a, b);
  };

  std::vector<double> integrand(m);
  bool warned = false;
  for (int k = 0; k < m; ++k) {
    const LoopState& loop = history[k];
    const Eigen::MatrixXd ux = loop_derivative(loop);
    const Eigen::MatrixXd ut = velocity(k);
    double s = 0.0;
    double kmin = 1e300, kmax = -1e300, area = 0.0;
    for (int j = 0; j < loop.size(); ++j) {
      const Vector3 p = loop.points.col(j);
      const double K = fac.curvature(p);
      const Vector3 jut = fac.complex_structure(p, fac.tangent_part(p, ut.col(j)));
      const double w = fac.metric(p, jut, ux.col(j));
      s += K * w;
      area += std::abs(w);
      kmin = std::min(kmin, K);
      kmax = std::max(kmax, K);
    }
    integrand[k] = s * loop.grid.dx();
    if (!warned && area * loop.grid.dx() < 1e-14 && kmax - kmin > 1e-12 && k > 0) {
      res.warnings.push_back("degenerate swept strip near t = " + std::to_string(times[k]));
      warned = true;
    }
  }
  for (int k = 1; k < m; ++k)
    res.theta[k] = res.theta[k - 1] + 0.5 * (times[k] - times[k - 1]) * (integrand[k] + integrand[k - 1]);
  return res;
}

// ---------------------------------------------------------------------------
// Ordered exponential

namespace detail {

inline double anti_hermitian_defect(const MatrixXcd& b) { return (b + b.adjoint()).norm(); }

/// exp(W) for anti-Hermitian W via the eigendecomposition of -iW.
inline MatrixXcd expm_anti_hermitian(const MatrixXcd& w) {
  const MatrixXcd h = cplx(0.0, -1.0) * w;
  const MatrixXcd hs = 0.5 * (h + h.adjoint());
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(hs);
  VectorXcd ph(es.eigenvalues().size());
  for (Eigen::Index k = 0; k < ph.size(); ++k) ph[k] = std::polar(1.0, es.eigenvalues()[k]);
  return es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint();
}

// Magnus-4 ordered product with step 2*stride sample spacings; G = -B. The
// first Magnus term uses the running integrals I when given.
inline MatrixXcd magnus_product(const std::vector<MatrixXcd>& B, double dx, int stride,
                                const std::vector<MatrixXcd>* I = nullptr) {
  const int intervals = static_cast<int>(B.size()) - 1;
  const int n = static_cast<int>(B.front().rows());
  MatrixXcd E = MatrixXcd::Identity(n, n);
  const double h = 2.0 * stride * dx;
  for (int k = 0; k + 2 * stride <= intervals; k += 2 * stride) {
    const MatrixXcd g0 = -B[k], gm = -B[k + stride], g1 = -B[k + 2 * stride];
    const MatrixXcd first = I ? MatrixXcd((*I)[k] - (*I)[k + 2 * stride]) : MatrixXcd(h / 6.0 * (g0 + 4.0 * gm + g1));
    const MatrixXcd omega = first + (h * h / 12.0) * (g1 * g0 - g0 * g1);
    E = expm_anti_hermitian(omega) * E;
  }
  return E;
}

// Integrals of the trigonometric interpolant of periodic samples from 0 to x_j,
// j = 0..N.
inline std::vector<MatrixXcd> running_integrals(const std::vector<MatrixXcd>& B) {
  const int N = static_cast<int>(B.size());
  const int n = static_cast<int>(B.front().rows());
  const SpectralGrid grid = SpectralGrid::circle(N);
  std::vector<MatrixXcd> I(N + 1, MatrixXcd::Zero(n, n));
  std::vector<double> re(N), im(N);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      for (int j = 0; j < N; ++j) {
        re[j] = B[j](r, c).real();
        im[j] = B[j](r, c).imag();
      }
      const double mr = std::accumulate(re.begin(), re.end(), 0.0) / N;
      const double mi = std::accumulate(im.begin(), im.end(), 0.0) / N;
      for (int j = 0; j < N; ++j) {
        re[j] -= mr;
        im[j] -= mi;
      }
      const auto Fr = grid.periodic_antiderivative(re), Fi = grid.periodic_antiderivative(im);
      for (int j = 0; j <= N; ++j) {
        const double x = double(j) / N;
        const int jj = j % N;
        I[j](r, c) = cplx(mr * x + Fr[jj] - Fr[0], mi * x + Fi[jj] - Fi[0]);
      }
    }
  return I;
}

}  // namespace detail

/// Closest unitary matrix (polar factor).
inline MatrixXcd unitarize(const MatrixXcd& m) {
  Eigen::JacobiSVD<MatrixXcd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().adjoint();
}

/// Chronological exponential E(1) of E_x = -B E, E(0) = I, from samples of B
/// on a uniform grid of [0, 1]. With `periodic` the samples are x_j = j/N and
/// B(1) = B(0); otherwise the N + 1 samples include both ends. Magnus-4 steps
/// of two sample spacings, Richardson extrapolated against the doubled step
/// when the interval count allows it, then projected to U(n). Periodic input
/// takes the first Magnus term from the trigonometric interpolant, so the
/// commuting case is exact to spectral accuracy.
inline MatrixXcd product_integral(std::vector<MatrixXcd> B, bool periodic = true) {
  if (B.empty()) throw DomainError("no connection samples");
  for (const auto& b : B)
    if (detail::anti_hermitian_defect(b) > 1e-10 * std::max(1.0, b.norm()))
      throw DomainError("connection samples must be anti-Hermitian");
  std::optional<std::vector<MatrixXcd>> I;
  if (periodic && B.size() >= 4 && B.size() % 2 == 0) I = detail::running_integrals(B);
  if (periodic) B.push_back(B.front());
  const int intervals = static_cast<int>(B.size()) - 1;
  const int n = static_cast<int>(B.front().rows());
  if (intervals == 0) return MatrixXcd::Identity(n, n);
  if (intervals % 2 != 0) throw DomainError("product integral needs an even number of intervals");
  const double dx = 1.0 / intervals;
  const std::vector<MatrixXcd>* ip = I ? &*I : nullptr;
  MatrixXcd E = detail::magnus_product(B, dx, 1, ip);
  if (intervals % 4 == 0) {
    const MatrixXcd E2 = detail::magnus_product(B, dx, 2, ip);
    E = (16.0 * E - E2) / 15.0;
  }
  return unitarize(E);
}

/// Partial ordered exponentials E(x_k) for k = 0..N along a periodic sample
/// set (Magnus-4 per pair of spacings; odd k use one extra trapezoidal
/// half-step and are less accurate).
inline std::vector<MatrixXcd> ordered_exponentials(const std::vector<MatrixXcd>& B) {
  const int N = static_cast<int>(B.size());
  const int n = static_cast<int>(B.front().rows());
  const double dx = 1.0 / N;
  std::vector<MatrixXcd> E(N + 1, MatrixXcd::Identity(n, n));
  auto at = [&](int k) -> const MatrixXcd& { return B[k % N]; };
  for (int k = 0; k + 2 <= N; k += 2) {
    const MatrixXcd g0 = -at(k), gm = -at(k + 1), g1 = -at(k + 2);
    const double h = 2.0 * dx;
    const MatrixXcd omega = h / 6.0 * (g0 + 4.0 * gm + g1) + (h * h / 12.0) * (g1 * g0 - g0 * g1);
    E[k + 2] = detail::expm_anti_hermitian(omega) * E[k];
    const MatrixXcd half = 0.5 * dx * (g0 + gm);
    E[k + 1] = detail::expm_anti_hermitian(half) * E[k];
  }
  return E;
}

struct XIndependence {
  double spectral_deviation = 0.0;
  double matrix_deviation = 0.0;
};

/// Sorted eigenvalue phases of a unitary matrix.
inline std::vector<double> eigenphases(const MatrixXcd& u) {
  Eigen::ComplexEigenSolver<MatrixXcd> es(u);
  std::vector<double> ph;
  for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) ph.push_back(std::arg(es.eigenvalues()[k]));
  std::sort(ph.begin(), ph.end());
  return ph;
}

inline double spectrum_distance(const MatrixXcd& a, const MatrixXcd& b) {
  Eigen::ComplexEigenSolver<MatrixXcd> ea(a), eb(b);
  std::vector<cplx> va(ea.eigenvalues().data(), ea.eigenvalues().data() + ea.eigenvalues().size());
  std::vector<cplx> vb(eb.eigenvalues().data(), eb.eigenvalues().data() + eb.eigenvalues().size());
  std::vector<int> perm(vb.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double worst = 0.0;
    for (size_t k = 0; k < va.size(); ++k) worst = std::max(worst, std::abs(va[k] - vb[perm[k]]));
    best = std::min(best, worst);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Starts the ordered product at every listed base sample and compares the
/// spectra, and the matrices after transporting each back to sample 0.
inline XIndependence x_independence_check(const SurfaceModel& surface, const LoopState& loop,
                                          const std::vector<int>& bases,
                                          const FrameSamples* field = nullptr) {
  XIndependence out;
  const int N = loop.size();
  const int n = surface.complex_dimension();
  Eigen::MatrixXd ux = loop_derivative(loop);
  if (ux.norm() == 0.0) return out;
  const FrameSamples f = field ? *field : tangent_frame_field(surface, loop);
  const auto B = connection_form(surface, loop, f);
  const auto E = ordered_exponentials(B);
  std::vector<MatrixXcd> P, aligned;
  for (int k : bases) {
    if (k < 0 || k >= N) throw DomainError("base index out of range");
    std::vector<MatrixXcd> rot(N);
    for (int j = 0; j < N; ++j) rot[j] = B[(k + j) % N];
    MatrixXcd pk = product_integral(rot);
    P.push_back(pk);
    aligned.push_back(E[k].inverse() * pk * E[k]);
  }
  for (size_t a = 0; a < P.size(); ++a)
    for (size_t b = a + 1; b < P.size(); ++b) {
      out.spectral_deviation = std::max(out.spectral_deviation, spectrum_distance(P[a], P[b]));
      out.matrix_deviation = std::max(out.matrix_deviation, (aligned[a] - aligned[b]).norm());
    }
  (void)n;
  return out;
}

/// Holonomy matrix A with Phi(x + 1) = A Phi(x) for the tangent frame field at
/// sample 0 (inverse of the chronological exponential).
inline MatrixXcd holonomy_matrix(const SurfaceModel& surface, const LoopState& loop,
                                 const FrameSamples* field = nullptr) {
  const int n = surface.complex_dimension();
  if (loop_derivative(loop).norm() == 0.0) return MatrixXcd::Identity(n, n);
  const FrameSamples f = field ? *field : tangent_frame_field(surface, loop);
  return product_integral(connection_form(surface, loop, f)).adjoint();
}

/// Continuous eigenphase tracking: eigenphases of `a` matched to the previous
/// lifted phases by the cheapest permutation and lifted to the nearest branch.
inline std::vector<double> track_eigenphases(const std::vector<double>& previous, const MatrixXcd& a) {
  std::vector<double> ph = eigenphases(a);
  if (previous.empty()) return ph;
  if (previous.size() != ph.size()) throw DomainError("eigenphase count changed");
  std::vector<int> perm(ph.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best_perm = perm;
  double best = 1e300;
  do {
    double cost = 0.0;
    for (size_t k = 0; k < ph.size(); ++k) {
      const double d = std::remainder(ph[perm[k]] - previous[k], kTwoPi);
      cost += d * d;
    }
    if (cost < best) {
      best = cost;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  std::vector<double> out(ph.size());
  for (size_t k = 0; k < ph.size(); ++k) out[k] = continue_lift(previous[k], ph[best_perm[k]]);
  return out;
}

/// Time series of holonomy data gathered along a run.
struct HolonomyRecord {
  std::vector<double> t;
  std::vector<double> theta_ode;
  std::vector<double> theta_gb;
  std::vector<double> theta_rate;
  std::vector<double> theta_rate_integrated;
  std::vector<MatrixXcd> A;
  std::vector<std::vector<double>> eigenphases;

  /// Appends one sample; lifts continue from the previous entry.
  void append(double time, double ode, double gb, double rate, const MatrixXcd& a) {
    if (!t.empty()) {
      ode = continue_lift(theta_ode.back(), ode);
      const double integ = theta_rate_integrated.back() + 0.5 * (time - t.back()) * (rate + theta_rate.back());
      theta_rate_integrated.push_back(integ);
    } else {
      theta_rate_integrated.push_back(ode);
    }
    t.push_back(time);
    theta_ode.push_back(ode);
    theta_gb.push_back(gb);
    theta_rate.push_back(rate);
    A.push_back(a);
    eigenphases.push_back(track_eigenphases(eigenphases.empty() ? std::vector<double>{} : eigenphases.back(), a));
  }

  double max_unitarity_defect() const {
    double m = 0.0;
    for (const auto& a : A)
      m = std::max(m, (a.adjoint() * a - MatrixXcd::Identity(a.rows(), a.cols())).norm());
    return m;
  }
};

}  // namespace smflow
