#pragma once

// Gauge reduction of the flow to a Schroedinger system.
//
// A parallel J-adapted frame e along the loop (nabla_x e = 0) turns u_x into
// complex coefficients Phi (Phi^a = a^a + i a^{n+a}, a^j = h(u_x, e_j)).
// The flow becomes i Phi_t = Phi_xx - i A Phi with A(q, c) = h(nabla_t e_c, e_q)
// in complex form. The frame seed at the base sample is parallel in time, so
// A vanishes there; A_x = R(u_x, u_t) follows from the curvature.
//
// On the circle (n = 1) A = i rho and the parallel frame twists by the
// holonomy: Phi(x + 1) = e^{-i theta} Phi(x). The untwisted field
// phi = e^{i theta (x - x_b)} Phi is periodic and solves
//   i phi_t = phi_xx - 2 i theta phi_x + V phi,
//   V = -theta^2 - (x - x_b) theta_t + rho,
// and the shifted field phi~(y) = phi(y + 2 int theta) solves
//   i phi~_t = phi~_yy + V(y + 2 int theta) phi~.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "smflow/errors.hpp"
#include "smflow/flow_direct.hpp"
#include "smflow/geometry.hpp"
#include "smflow/holonomy.hpp"
#include "smflow/spectral.hpp"

namespace smflow {

inline constexpr double kFrameTolerance = 1e-10;
inline constexpr double kTwistTolerance = 1e-6;

/// Parallel frames along the loop. frames[j] is the frame at sample j; on the
/// circle `wrap` is the frame after one full turn, back at the base sample.
struct FrameField {
  int base = 0;
  std::vector<Eigen::MatrixXd> frames;
  Eigen::MatrixXd wrap;

  int size() const { return static_cast<int>(frames.size()); }
};

namespace detail {

// Loop samples in path order starting at `base`, lifted across the seam.
inline SampledPath rotated_path(const LoopState& loop, int base) {
  const int N = loop.size();
  Eigen::MatrixXd pts(loop.points.rows(), N);
  for (int k = 0; k < N; ++k) {
    const int j = (base + k) % N;
    pts.col(k) = loop.points.col(j);
    if (base + k >= N && loop.winds()) pts.col(k) += loop.winding;
  }
  SampledPath path{pts, std::nullopt, true, std::nullopt};
  if (loop.winds()) path.winding = loop.winding;
  return path;
}

inline std::vector<double> real_part(const std::vector<cplx>& z) {
  std::vector<double> out(z.size());
  for (size_t j = 0; j < z.size(); ++j) out[j] = z[j].real();
  return out;
}

inline std::vector<double> imag_part(const std::vector<cplx>& z) {
  std::vector<double> out(z.size());
  for (size_t j = 0; j < z.size(); ++j) out[j] = z[j].imag();
  return out;
}

// Zero-mean periodic antiderivative of f - mean(f).
inline std::vector<cplx> zero_mean_antiderivative(const SpectralGrid& grid, const std::vector<cplx>& f) {
  const auto re = grid.periodic_antiderivative(real_part(f));
  const auto im = grid.periodic_antiderivative(imag_part(f));
  std::vector<cplx> out(f.size());
  cplx mean = 0.0;
  for (size_t j = 0; j < f.size(); ++j) {
    out[j] = cplx(re[j], im[j]);
    mean += out[j];
  }
  mean /= static_cast<double>(f.size());
  for (auto& v : out) v -= mean;
  return out;
}

inline cplx mean_of(const std::vector<cplx>& f) {
  cplx s = 0.0;
  for (cplx v : f) s += v;
  return s / static_cast<double>(f.size());
}

}  // namespace detail

/// Seed at the base sample: per factor the unit tangent where the factor
/// moves, a fixed reference direction elsewhere.
inline Eigen::MatrixXd tangent_seed(const SurfaceModel& surface, const LoopState& loop, int base = 0) {
  const int n = surface.complex_dimension();
  const VectorX p = loop.points.col(base);
  const VectorX ux = loop_derivative(loop).col(base);
  Eigen::MatrixXd seed = reference_frame(surface, p);
  for (int f = 0; f < n; ++f) {
    const auto& fac = surface.factor(f);
    const Vector3 q = p.segment<3>(3 * f), v = ux.segment<3>(3 * f);
    const double speed = std::sqrt(fac.metric(q, v, v));
    if (speed > 1e-9) {
      seed.col(f).setZero();
      seed.block<3, 1>(3 * f, f) = v / speed;
    }
  }
  unitarize_frame(surface, p, seed);
  return seed;
}

/// Largest deviation of a frame from h-orthonormality and J-adaptedness.
inline double frame_defect(const SurfaceModel& surface, const VectorX& p, const Eigen::MatrixXd& e) {
  const int m = static_cast<int>(e.cols()), n = m / 2;
  double worst = 0.0;
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b)
      worst = std::max(worst, std::abs(surface.metric(p, e.col(a), e.col(b)) - (a == b ? 1.0 : 0.0)));
  }
  for (int a = 0; a < n; ++a)
    worst = std::max(worst, (surface.complex_structure(p, e.col(a)) - e.col(n + a)).cwiseAbs().maxCoeff());
  return worst;
}

/// Smooth unit field f along the loop per factor with its connection angle
/// omega = h(nabla_x f, J f). Sphere factors project a fixed axis chosen away
/// from the loop; chart factors use the first coordinate direction.
struct AuxiliaryFrame {
  std::vector<Eigen::Matrix3Xd> f;       // per factor, 3 x N
  std::vector<std::vector<double>> omega;  // per factor
};

namespace detail {

inline Vector3 pick_axis(const Eigen::Matrix3Xd& pts) {
  Vector3 best = Vector3::UnitX();
  double best_score = -1.0;
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j)
      for (int k = 0; k <= 1; ++k) {
        if (k == 0 && (j < 0 || (j == 0 && i <= 0))) continue;
        const Vector3 a = Vector3(i, j, k).normalized();
        double worst = 1.0;
        for (Eigen::Index c = 0; c < pts.cols(); ++c)
          worst = std::min(worst, a.cross(pts.col(c).normalized()).norm());
        if (worst > best_score) {
          best_score = worst;
          best = a;
        }
      }
  if (best_score < 1e-3) throw DomainError("no smooth auxiliary frame along this loop");
  return best;
}

}  // namespace detail

inline AuxiliaryFrame auxiliary_frame(const SurfaceModel& surface, const LoopState& loop) {
  const int N = loop.size(), n = surface.complex_dimension();
  const Eigen::MatrixXd ux = loop_derivative(loop);
  AuxiliaryFrame out;
  out.f.resize(n);
  out.omega.assign(n, std::vector<double>(N));
  for (int fi = 0; fi < n; ++fi) {
    const auto& fac = surface.factor(fi);
    const Eigen::Matrix3Xd pts = loop.points.middleRows(3 * fi, 3);
    const Vector3 axis = fac.embedded() ? detail::pick_axis(pts) : Vector3::UnitX();
    out.f[fi].resize(3, N);
    for (int j = 0; j < N; ++j) {
      const Vector3 p = pts.col(j), v = ux.block<3, 1>(3 * fi, j);
      const double el = std::exp(-fac.conformal_log(p));
      // d(e^{-lambda}) along v, using the full ambient gradient of lambda.
      double dlam = 0.0;
      if (fac.kind() == FactorKind::WarpedSphere) dlam = fac.warp()->gradient(p).dot(v);
      else if (fac.kind() == FactorKind::HyperbolicDisk) dlam = fac.conformal_gradient(p).dot(v);
      Vector3 dir, ddir;
      if (fac.embedded()) {
        const double r = p.norm();
        const Vector3 nn = p / r, dn = (v - nn.dot(v) * nn) / r;
        const Vector3 t = axis - axis.dot(nn) * nn;
        const Vector3 dt = -axis.dot(dn) * nn - axis.dot(nn) * dn;
        const double tn = t.norm();
        dir = t / tn;
        ddir = (dt - dir.dot(dt) * dir) / tn;
      } else {
        dir = axis;
        ddir.setZero();
      }
      const Vector3 f = el * dir;
      const Vector3 df = el * ddir - dlam * f;
      out.f[fi].col(j) = f;
      const Vector3 cov = df + fac.connection(p, v, f);
      out.omega[fi][j] = fac.metric(p, cov, fac.complex_structure(p, f));
    }
  }
  return out;
}

/// Frame solving nabla_x e = 0 from the seed at `base`, built as
/// e = f diag(e^{i psi}) S with f the auxiliary frame, psi = -int_b omega
/// (spectral antiderivative) and S the seed in f(base) coordinates. On the
/// circle `wrap` is the frame after one full turn.
inline FrameField parallel_frame(const SurfaceModel& surface, const LoopState& loop, const Eigen::MatrixXd& seed,
                                 int base = 0) {
  const int N = loop.size(), n = surface.complex_dimension();
  if (base < 0 || base >= N) throw DomainError("frame base index out of range");
  const VectorX pb = loop.points.col(base);
  if (seed.rows() != surface.ambient_dimension() || seed.cols() != 2 * n)
    throw DomainError("frame seed has the wrong shape");
  if (frame_defect(surface, pb, seed) > kFrameTolerance)
    throw DomainError("frame seed is not orthonormal and J-adapted");
  const AuxiliaryFrame aux = auxiliary_frame(surface, loop);
  const auto off = [&] {
    std::vector<double> o(N);
    for (int j = 0; j < N; ++j)
      o[j] = loop.grid.is_circle() ? double(j - base + (j < base ? N : 0)) / N : loop.grid.x(j) - loop.grid.x(base);
    return o;
  }();
  // psi_f at every sample and after the full turn.
  std::vector<std::vector<double>> psi(n, std::vector<double>(N));
  std::vector<double> psi_wrap(n);
  for (int fi = 0; fi < n; ++fi) {
    const auto& w = aux.omega[fi];
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= N;
    const auto F = loop.grid.periodic_antiderivative(w);
    for (int j = 0; j < N; ++j) psi[fi][j] = -(F[j] - F[base] + mean * off[j]);
    psi_wrap[fi] = -mean * loop.grid.length();
  }
  // Seed coordinates: S(beta, alpha) = c_beta(seed_alpha) in the basis f(base).
  auto f_at = [&](int j, int fi) {
    VectorX v = VectorX::Zero(surface.ambient_dimension());
    v.segment<3>(3 * fi) = aux.f[fi].col(j);
    return v;
  };
  MatrixXcd S(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      const VectorX fb = f_at(base, b);
      S(b, a) = cplx(surface.metric(pb, seed.col(a), fb), surface.metric(pb, seed.col(a), surface.complex_structure(pb, fb)));
    }
  auto build = [&](int j, const std::vector<double>& ang) {
    const VectorX p = loop.points.col(j);
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(surface.ambient_dimension(), 2 * n);
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        const cplx z = std::polar(1.0, ang[b]) * S(b, a);
        const VectorX fb = f_at(j, b);
        e.col(a) += z.real() * fb + z.imag() * surface.complex_structure(p, fb);
      }
      e.col(n + a) = surface.complex_structure(p, e.col(a));
    }
    return e;
  };
  FrameField out;
  out.base = base;
  out.frames.resize(N);
  std::vector<double> ang(n);
  for (int j = 0; j < N; ++j) {
    for (int fi = 0; fi < n; ++fi) ang[fi] = psi[fi][j];
    out.frames[j] = build(j, ang);
  }
  out.frames[base] = seed;
  if (loop.grid.is_circle()) {
    out.wrap = build(base, psi_wrap);
  } else {
    out.wrap = seed;
  }
  return out;
}

/// Complex holonomy H of a circle frame: wrap = e(base) H. Phi(x + 1) = H^{-1} Phi(x).
inline MatrixXcd frame_holonomy(const SurfaceModel& surface, const LoopState& loop, const FrameField& frame) {
  const int n = surface.complex_dimension();
  const VectorX p = loop.points.col(frame.base);
  MatrixXcd H(n, n);
  for (int a = 0; a < n; ++a) H.col(a) = complex_coordinates(surface, p, frame.frames[frame.base], frame.wrap.col(a));
  return H;
}

struct FrameCoefficients {
  DomainKind domain = DomainKind::Circle;
  int base = 0;
  Eigen::MatrixXd a;   // 2n x N, a^j = h(u_x, e_j)
  MatrixXcd Phi;       // n x N
  VectorXcd Phi_wrap;  // u_x(base) in the wrap frame (circle)
  std::vector<cplx> phi;  // untwisted field once set
  double theta_used = 0.0;

  int n() const { return static_cast<int>(Phi.rows()); }
  int size() const { return static_cast<int>(Phi.cols()); }
};

inline FrameCoefficients coefficients(const SurfaceModel& surface, const LoopState& loop, const FrameField& frame) {
  const int N = loop.size(), n = surface.complex_dimension();
  if (frame.size() != N) throw DomainError("frame and loop sizes differ");
  const Eigen::MatrixXd ux = loop_derivative(loop);
  FrameCoefficients c;
  c.domain = loop.grid.kind();
  c.base = frame.base;
  c.a.resize(2 * n, N);
  c.Phi.resize(n, N);
  for (int j = 0; j < N; ++j) {
    const VectorX p = loop.points.col(j);
    for (int k = 0; k < 2 * n; ++k) c.a(k, j) = surface.metric(p, ux.col(j), frame.frames[j].col(k));
    for (int k = 0; k < n; ++k) c.Phi(k, j) = cplx(c.a(k, j), c.a(n + k, j));
  }
  c.Phi_wrap = complex_coordinates(surface, loop.points.col(frame.base), frame.wrap, ux.col(frame.base));
  return c;
}

/// sum_j a^j e_j per sample.
inline Eigen::MatrixXd reconstruct_tangent(const FrameCoefficients& c, const FrameField& frame) {
  Eigen::MatrixXd out(frame.frames.front().rows(), c.size());
  for (int j = 0; j < c.size(); ++j) out.col(j) = frame.frames[j] * c.a.col(j);
  return out;
}

/// b^j = h(u_t, e_j) with u_t from the flow.
inline Eigen::MatrixXd time_coefficients(const SurfaceModel& surface, const LoopState& loop, const FrameField& frame) {
  const Eigen::MatrixXd ut = flow_rhs(surface, loop);
  const int n = surface.complex_dimension();
  Eigen::MatrixXd b(2 * n, loop.size());
  for (int j = 0; j < loop.size(); ++j)
    for (int k = 0; k < 2 * n; ++k) b(k, j) = surface.metric(loop.points.col(j), ut.col(j), frame.frames[j].col(k));
  return b;
}

/// Twisted periodicity residual |Phi_wrap - e^{-i theta} Phi(base)| (n = 1).
inline double twist_residual(const FrameCoefficients& c, double theta) {
  return std::abs(c.Phi_wrap[0] - std::polar(1.0, -theta) * c.Phi(0, c.base));
}

/// phi_j = e^{i theta (x_j - x_b)} Phi_j on the fundamental domain
/// [x_b, x_b + 1). Throws InconsistentHolonomy when Phi does not twist by theta.
inline std::vector<cplx> untwist(FrameCoefficients& c, double theta) {
  if (c.n() != 1) throw UnsupportedOperation("untwist needs n = 1");
  if (c.domain != DomainKind::Circle) throw DomainError("untwist needs the circle domain");
  const double scale = std::max(1.0, c.Phi.cwiseAbs().maxCoeff());
  const double res = twist_residual(c, theta);
  if (res > kTwistTolerance * scale)
    throw InconsistentHolonomy("coefficients twist does not match holonomy (residual " + std::to_string(res) + ")");
  const int N = c.size();
  std::vector<cplx> phi(N);
  for (int j = 0; j < N; ++j) {
    const double off = double(j - c.base + (j < c.base ? N : 0)) / N;
    phi[j] = std::polar(1.0, theta * off) * c.Phi(0, j);
  }
  c.phi = phi;
  c.theta_used = theta;
  return phi;
}

/// Inverse of untwist: Phi on the fundamental domain from a periodic phi.
inline std::vector<cplx> retwist(const std::vector<cplx>& phi, double theta, int base) {
  const int N = static_cast<int>(phi.size());
  std::vector<cplx> out(N);
  for (int j = 0; j < N; ++j) {
    const double off = double(j - base + (j < base ? N : 0)) / N;
    out[j] = std::polar(1.0, -theta * off) * phi[j];
  }
  return out;
}

/// Shift s = 2 int_0^t theta by the cumulative trapezoid rule.
inline std::vector<double> shift_history(const std::vector<double>& times, const std::vector<double>& thetas) {
  if (times.size() != thetas.size()) throw DomainError("theta history and times differ in length");
  std::vector<double> s(times.size(), 0.0);
  for (size_t k = 1; k < times.size(); ++k)
    s[k] = s[k - 1] + (times[k] - times[k - 1]) * (thetas[k] + thetas[k - 1]);
  return s;
}

/// Slices phi~(t_k, y) = phi(t_k, y + s_k).
inline std::vector<std::vector<cplx>> spacetime_shift(const SpectralGrid& grid,
                                                      const std::vector<std::vector<cplx>>& history,
                                                      const std::vector<double>& times,
                                                      const std::vector<double>& thetas) {
  if (!grid.is_circle()) throw DomainError("space-time shift needs the circle domain");
  if (history.size() != times.size()) throw DomainError("history and times differ in length");
  const auto s = shift_history(times, thetas);
  std::vector<std::vector<cplx>> out(history.size());
  const int N = grid.size();
  for (size_t k = 0; k < history.size(); ++k) {
    const double steps = s[k] * N;
    if (std::abs(steps - std::round(steps)) < 1e-12) {
      const long r = static_cast<long>(std::llround(steps));
      out[k].resize(N);
      for (int j = 0; j < N; ++j) out[k][j] = history[k][((j + r) % N + N) % N];
    } else {
      out[k] = grid.shift(history[k], s[k]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curvature contractions

/// Real 2n x 2n contractions per sample: P(q, c) and its analogue D with
/// every K_f replaced by dK_f(u_x).
struct Contractions {
  std::vector<Eigen::MatrixXd> P, D;
};

namespace detail {

inline Eigen::MatrixXd factor_gram(const SurfaceModel& surface, const VectorX& p, const Eigen::MatrixXd& e, int f) {
  const auto& fac = surface.factor(f);
  const Vector3 q = p.segment<3>(3 * f);
  const Eigen::MatrixXd blk = e.middleRows(3 * f, 3);
  return fac.metric_scale(q) * blk.transpose() * blk;
}

// sum_{a,b} [ a^a a^{b'} R_{a b c}^q + 1/2 (a^{a'} a^{b'} + a^a a^b) R_{a' b c}^q ]
// with R_{klp}^q = sum_f w_f (G_f(l,p) G_f(k,q) - G_f(k,p) G_f(l,q)), a' = a + n.
inline Eigen::MatrixXd contract(const std::vector<Eigen::MatrixXd>& G, const std::vector<double>& w,
                                const Eigen::VectorXd& a, int n) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (size_t f = 0; f < G.size(); ++f) {
    if (w[f] == 0.0) continue;
    const Eigen::MatrixXd& g = G[f];
    for (int al = 0; al < n; ++al)
      for (int be = 0; be < n; ++be) {
        const double c1 = a[al] * a[be + n];
        const double c2 = 0.5 * (a[al + n] * a[be + n] + a[al] * a[be]);
        for (int q = 0; q < 2 * n; ++q)
          for (int c = 0; c < 2 * n; ++c) {
            const double r1 = g(be, c) * g(al, q) - g(al, c) * g(be, q);
            const double r2 = g(be, c) * g(al + n, q) - g(al + n, c) * g(be, q);
            out(q, c) += w[f] * (c1 * r1 + c2 * r2);
          }
      }
  }
  return out;
}

}  // namespace detail

/// Complex form of a J-commuting real 2n x 2n matrix: M[0:n, 0:n] + i M[n:2n, 0:n].
inline MatrixXcd complexify(const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows()) / 2;
  MatrixXcd out(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out(r, c) = cplx(m(r, c), m(n + r, c));
  return out;
}

inline Contractions curvature_contractions(const SurfaceModel& surface, const LoopState& loop,
                                           const FrameField& frame, const FrameCoefficients& c) {
  const int N = loop.size(), n = surface.complex_dimension();
  const Eigen::MatrixXd ux = loop_derivative(loop);
  Contractions out;
  out.P.resize(N);
  out.D.resize(N);
  std::vector<Eigen::MatrixXd> G(n);
  std::vector<double> K(n), dK(n);
  for (int j = 0; j < N; ++j) {
    const VectorX p = loop.points.col(j);
    for (int f = 0; f < n; ++f) {
      G[f] = detail::factor_gram(surface, p, frame.frames[j], f);
      K[f] = surface.factor(f).curvature(p.segment<3>(3 * f));
      dK[f] = surface.factor(f).curvature_gradient(p.segment<3>(3 * f)).dot(ux.block<3, 1>(3 * f, j));
    }
    out.P[j] = detail::contract(G, K, c.a.col(j), n);
    out.D[j] = detail::contract(G, dK, c.a.col(j), n);
  }
  return out;
}

/// x-derivative of the time connection, h(R(u_x, u_t) e_c, e_q), per sample.
inline std::vector<Eigen::MatrixXd> connection_x_derivative(const SurfaceModel& surface, const LoopState& loop,
                                                            const FrameField& frame, const FrameCoefficients& c) {
  const int N = loop.size(), n = surface.complex_dimension();
  const Eigen::MatrixXd b = time_coefficients(surface, loop, frame);
  std::vector<Eigen::MatrixXd> out(N, Eigen::MatrixXd::Zero(2 * n, 2 * n));
  for (int j = 0; j < N; ++j) {
    const VectorX p = loop.points.col(j);
    for (int f = 0; f < n; ++f) {
      const Eigen::MatrixXd g = detail::factor_gram(surface, p, frame.frames[j], f);
      const double K = surface.factor(f).curvature(p.segment<3>(3 * f));
      const Eigen::VectorXd af = g * c.a.col(j), bf = g * b.col(j);
      out[j] += K * (af * bf.transpose() - bf * af.transpose());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinear terms

/// Complex n x n fields per sample.
///  circle (n = 1): A = Q + S - W + T with Q(x) = int_{x-1}^x A, S the
///    P-contraction, W its mean, T = -int_{x-1}^x (s - x + 1) D(s) ds;
///  line: S = P and T = -int_{left}^x D, Q = W = 0.
/// `A` is the time connection in the design gauge (zero at the base).
struct NonlinearTerms {
  DomainKind domain = DomainKind::Circle;
  int base = 0;
  std::vector<MatrixXcd> Q, S, T, A;
  MatrixXcd W;
  MatrixXcd jump;                 // A(x + 1) - A(x) on the circle
  double boundary_residual = 0;   // |P(left)| on the line

  int size() const { return static_cast<int>(S.size()); }
};

/// Sample positions measured from the base along the fundamental domain.
inline std::vector<double> base_offsets(const SpectralGrid& grid, int base) {
  const int N = grid.size();
  std::vector<double> off(N);
  for (int j = 0; j < N; ++j)
    off[j] = grid.is_circle() ? double(j - base + (j < base ? N : 0)) / N : grid.x(j) - grid.x(base);
  return off;
}

inline NonlinearTerms nonlinear_terms(const SurfaceModel& surface, const LoopState& loop, const FrameField& frame,
                                      const FrameCoefficients& c) {
  const int N = loop.size(), n = surface.complex_dimension();
  const auto con = curvature_contractions(surface, loop, frame, c);
  NonlinearTerms t;
  t.domain = loop.grid.kind();
  t.base = frame.base;
  t.S.resize(N);
  t.Q.assign(N, MatrixXcd::Zero(n, n));
  t.T.resize(N);
  t.A.resize(N);
  t.W = MatrixXcd::Zero(n, n);
  t.jump = MatrixXcd::Zero(n, n);
  std::vector<MatrixXcd> D(N);
  for (int j = 0; j < N; ++j) {
    t.S[j] = complexify(con.P[j]);
    D[j] = complexify(con.D[j]);
  }

  if (!loop.grid.is_circle()) {
    // Tail integral from the left edge; the connection is taken to vanish there.
    const double padding = kPaddingFraction * loop.grid.length();
    const Eigen::MatrixXd ux = loop_derivative(loop);
    for (int j = 0; j < N; ++j) {
      const double x = loop.grid.x(j);
      if (x < loop.grid.origin() + padding || x > loop.grid.origin() + loop.grid.length() - padding)
        if (ux.col(j).cwiseAbs().maxCoeff() > kPaddingTolerance)
          throw DomainError("line-domain loop does not decay in the padding region");
    }
    if (frame.base != 0) throw DomainError("line-domain terms need the frame based at the left edge");
    const double dx = loop.grid.dx();
    t.T[0] = MatrixXcd::Zero(n, n);
    for (int j = 1; j < N; ++j) t.T[j] = t.T[j - 1] - 0.5 * dx * (D[j] + D[j - 1]);
    t.boundary_residual = t.S[0].norm();
    for (int j = 0; j < N; ++j) t.A[j] = t.S[j] - t.S[0] + t.T[j];
    return t;
  }

  if (n != 1) throw UnsupportedOperation("circle reduction terms need n = 1; use the holonomy matrix for n >= 2");
  const SpectralGrid& grid = loop.grid;
  const int b = frame.base;
  std::vector<cplx> s(N), d(N);
  for (int j = 0; j < N; ++j) {
    s[j] = t.S[j](0, 0);
    d[j] = D[j](0, 0);
  }
  const cplx sbar = detail::mean_of(s), dbar = detail::mean_of(d);
  const auto F = detail::zero_mean_antiderivative(grid, d);  // int (D - dbar), zero mean
  const auto off = base_offsets(grid, b);
  // A on [x_b, x_b + 1): P(x) - P(b) - int_b^x D.
  for (int j = 0; j < N; ++j) t.A[j] = MatrixXcd::Constant(1, 1, s[j] - s[b] - (F[j] - F[b]) - dbar * off[j]);
  t.jump(0, 0) = -dbar;
  t.W(0, 0) = sbar;
  const cplx windowed = sbar - s[b] + F[b] - 0.5 * dbar;  // int_b^{b+1} A
  for (int j = 0; j < N; ++j) {
    t.Q[j](0, 0) = windowed - (1.0 - off[j]) * t.jump(0, 0);
    t.T[j] = MatrixXcd::Constant(1, 1, -(0.5 * dbar + F[j]));
  }
  return t;
}

/// -i A in complex form for n = 1 on the circle: rho = -i (Q + S - W + T).
inline std::vector<double> circle_rho(const NonlinearTerms& t) {
  std::vector<double> rho(t.size());
  for (int j = 0; j < t.size(); ++j)
    rho[j] = (cplx(0.0, -1.0) * (t.Q[j](0, 0) + t.S[j](0, 0) - t.W(0, 0) + t.T[j](0, 0))).real();
  return rho;
}

/// V = -theta^2 - (x - x_b) theta_t + rho on the fundamental domain; periodic.
inline std::vector<double> circle_potential(const SpectralGrid& grid, const NonlinearTerms& t, double theta,
                                            double theta_rate) {
  const auto rho = circle_rho(t);
  const auto off = base_offsets(grid, t.base);
  std::vector<double> V(rho.size());
  for (size_t j = 0; j < V.size(); ++j) V[j] = -theta * theta - off[j] * theta_rate + rho[j];
  return V;
}

/// The same potential from u alone: V = -theta^2 + g - g(b) - (G - G(b)) with
/// g = K h(u_x, u_x)/2 and G the periodic antiderivative of
/// dK(u_x) h(u_x, u_x)/2 minus its mean.
inline std::vector<double> circle_potential_from_loop(const SurfaceModel& surface, const LoopState& loop,
                                                      double theta, int base) {
  if (surface.complex_dimension() != 1) throw UnsupportedOperation("scalar potential needs n = 1");
  const int N = loop.size();
  const auto& fac = surface.factor(0);
  const Eigen::MatrixXd ux = loop_derivative(loop);
  std::vector<double> g(N), dg(N);
  for (int j = 0; j < N; ++j) {
    const Vector3 p = loop.points.col(j), v = ux.col(j);
    const double a2 = fac.metric(p, v, v);
    g[j] = 0.5 * fac.curvature(p) * a2;
    dg[j] = 0.5 * fac.curvature_gradient(p).dot(v) * a2;
  }
  const auto G = loop.grid.periodic_antiderivative(dg);
  std::vector<double> V(N);
  for (int j = 0; j < N; ++j) V[j] = -theta * theta + g[j] - g[base] - (G[j] - G[base]);
  return V;
}

enum class AssemblyMode { Standard, VariableMetric };

/// Right-hand side F with i psi_t = psi_xx + F.
///  circle (n = 1): psi is the shifted untwisted field phi~ on the grid and
///    F(y) = V(y + shift) phi~(y);
///  line: psi = Phi (n x N) and F = -i (S + T) Phi; in variable-metric mode
///    with metric factor alpha(x) on the line
///    F = (alpha - 1) Phi_xx + 3/2 alpha_x Phi_x + 1/2 alpha_xx Phi - i (S + T) Phi.
struct AssemblyInput {
  const NonlinearTerms* terms = nullptr;
  const MatrixXcd* field = nullptr;  // n x N
  double theta = 0.0;
  double theta_rate = 0.0;
  double shift = 0.0;
  AssemblyMode mode = AssemblyMode::Standard;
  const std::vector<double>* alpha = nullptr;
};

inline MatrixXcd assemble_nls_rhs(const SpectralGrid& grid, const AssemblyInput& in) {
  if (!in.terms || !in.field) throw DomainError("assembly needs terms and a field");
  const NonlinearTerms& t = *in.terms;
  const MatrixXcd& psi = *in.field;
  const int N = grid.size(), n = static_cast<int>(psi.rows());
  if (psi.cols() != N || t.size() != N) throw DomainError("assembly inputs live on different grids");
  MatrixXcd F(n, N);
  if (grid.is_circle()) {
    if (in.mode == AssemblyMode::VariableMetric)
      throw UnsupportedOperation("variable-metric assembly is not available with circle holonomy");
    auto V = circle_potential(grid, t, in.theta, in.theta_rate);
    if (in.shift != 0.0) V = grid.shift(V, in.shift);
    for (int j = 0; j < N; ++j) F(0, j) = V[j] * psi(0, j);
    return F;
  }
  for (int j = 0; j < N; ++j) F.col(j) = cplx(0.0, -1.0) * (t.S[j] + t.T[j]) * psi.col(j);
  if (in.mode == AssemblyMode::VariableMetric) {
    if (!in.alpha || static_cast<int>(in.alpha->size()) != N) throw DomainError("variable metric needs alpha samples");
    const auto a1 = grid.derivative(*in.alpha, 1), a2 = grid.derivative(*in.alpha, 2);
    for (int r = 0; r < n; ++r) {
      std::vector<cplx> row(N);
      for (int j = 0; j < N; ++j) row[j] = psi(r, j);
      const auto d1 = grid.derivative(row, 1), d2 = grid.derivative(row, 2);
      for (int j = 0; j < N; ++j)
        F(r, j) += ((*in.alpha)[j] - 1.0) * d2[j] + 1.5 * a1[j] * d1[j] + 0.5 * a2[j] * row[j];
    }
  }
  return F;
}

// ---------------------------------------------------------------------------
// Transforms for n >= 2 (inspection only)

/// For A = U^* diag(e^{i lambda}) U with principal lambda:
///  tilde Phi(x) = A^{-x} Phi(x)   (periodic, non-diagonal derivative term)
///  hat Phi(x)   = D^{-x} U Phi(x) (periodic components in the eigenbasis).
struct TransformedFields {
  MatrixXcd tilde, hat;
};

inline TransformedFields holonomy_transforms(const MatrixXcd& A, const MatrixXcd& Phi, const std::vector<double>& offsets) {
  Eigen::ComplexEigenSolver<MatrixXcd> es(A);
  const MatrixXcd Ustar = es.eigenvectors();  // columns: eigenvectors
  MatrixXcd U = unitarize(Ustar).adjoint();
  Eigen::VectorXd lam(A.rows());
  for (Eigen::Index k = 0; k < lam.size(); ++k) lam[k] = std::arg(es.eigenvalues()[k]);
  TransformedFields out{MatrixXcd(Phi.rows(), Phi.cols()), MatrixXcd(Phi.rows(), Phi.cols())};
  for (Eigen::Index j = 0; j < Phi.cols(); ++j) {
    VectorXcd ph(lam.size());
    for (Eigen::Index k = 0; k < lam.size(); ++k) ph[k] = std::polar(1.0, -lam[k] * offsets[j]);
    out.hat.col(j) = ph.asDiagonal() * (U * Phi.col(j));
    out.tilde.col(j) = U.adjoint() * out.hat.col(j);
  }
  return out;
}

}  // namespace smflow
