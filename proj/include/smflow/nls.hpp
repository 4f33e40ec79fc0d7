#pragma once

// Free and forced Schroedinger evolution, i phi_t = phi_xx + F.
//
// Two conventions share one sample layout. Physical fields live on the
// simulation grid (period 1 on the circle, [-L/2, L/2) on the line) and use
// wavenumbers 2 pi m / length. Torus fields read the same samples as a
// function on [0, 2 pi) with integer wavenumbers m; there the modes
// e^{i(mx + m^2 t)} are 2 pi periodic in t as well and all L^p norms use the
// normalized measure dx dt / (4 pi^2). Converting a period-1 field to the torus
// rescales time by 4 pi^2.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "smflow/errors.hpp"
#include "smflow/spectral.hpp"

namespace smflow {

enum class Convention { Physical, Torus };

class ComplexField {
 public:
  ComplexField(SpectralGrid grid, Eigen::MatrixXcd values, Convention conv = Convention::Physical)
      : grid_(std::move(grid)), values_(std::move(values)), conv_(conv) {
    if (values_.cols() != grid_.size()) throw DomainError("field samples do not match the grid");
    if (values_.rows() < 1) throw DomainError("field needs at least one component");
    if (!values_.allFinite()) throw DomainError("field has non-finite samples");
    if (conv_ == Convention::Torus && !grid_.is_circle()) throw DomainError("torus convention needs a circle grid");
  }

  static ComplexField scalar(const SpectralGrid& grid, const std::vector<cplx>& v,
                             Convention conv = Convention::Physical) {
    Eigen::MatrixXcd m(1, grid.size());
    for (int j = 0; j < grid.size(); ++j) m(0, j) = v.at(j);
    return ComplexField(grid, std::move(m), conv);
  }

  /// Sum of c_m e^{i m x} over the given (mode, coefficient) pairs; torus samples.
  static ComplexField torus_modes(const SpectralGrid& grid, const std::vector<std::pair<int, cplx>>& modes) {
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(1, grid.size());
    for (int j = 0; j < grid.size(); ++j) {
      const double x = kTwoPi * j / grid.size();
      for (const auto& [k, c] : modes) m(0, j) += c * std::polar(1.0, k * x);
    }
    return ComplexField(grid, std::move(m), Convention::Torus);
  }

  const SpectralGrid& grid() const { return grid_; }
  const Eigen::MatrixXcd& values() const { return values_; }
  Convention convention() const { return conv_; }
  int size() const { return grid_.size(); }
  int components() const { return static_cast<int>(values_.rows()); }

  std::vector<cplx> row(int r = 0) const {
    std::vector<cplx> out(size());
    for (int j = 0; j < size(); ++j) out[j] = values_(r, j);
    return out;
  }

  double wavenumber(int j) const { return conv_ == Convention::Torus ? grid_.mode(j) : grid_.wavenumber(j); }

  /// Weight of one sample in the spatial integral.
  double measure() const { return conv_ == Convention::Torus ? 1.0 / size() : grid_.dx(); }

  double lp_norm(double p) const {
    double s = 0.0;
    for (Eigen::Index j = 0; j < values_.cols(); ++j) s += std::pow(values_.col(j).norm(), p);
    return std::pow(s * measure(), 1.0 / p);
  }
  double l2_norm() const { return std::sqrt(values_.squaredNorm() * measure()); }

  /// Normalized Fourier coefficients, one row per component.
  Eigen::MatrixXcd modes() const {
    Eigen::MatrixXcd c(values_.rows(), size());
    for (int r = 0; r < components(); ++r) {
      const auto cr = grid_.coefficients(row(r));
      for (int j = 0; j < size(); ++j) c(r, j) = cr[j];
    }
    return c;
  }

  /// L^2 norm from the mode representation.
  double mode_l2_norm() const {
    const double len = conv_ == Convention::Torus ? 1.0 : grid_.length();
    return std::sqrt(modes().squaredNorm() * len);
  }

 private:
  SpectralGrid grid_;
  Eigen::MatrixXcd values_;
  Convention conv_;
};

/// Same samples read on [0, 2 pi). Needs a period-1 circle field.
inline ComplexField to_torus(const ComplexField& f) {
  if (f.convention() == Convention::Torus) return f;
  if (!f.grid().is_circle()) throw DomainError("only circle fields have a torus reading");
  return ComplexField(f.grid(), f.values(), Convention::Torus);
}
inline ComplexField to_physical(const ComplexField& f) {
  return ComplexField(f.grid(), f.values(), Convention::Physical);
}
inline double torus_time(double t_physical) { return 4.0 * kPi * kPi * t_physical; }
inline double physical_time(double t_torus) { return t_torus / (4.0 * kPi * kPi); }

/// Scalar field samples on a uniform time grid; every slice on the same grid.
class SpaceTimeField {
 public:
  SpaceTimeField(std::vector<double> times, std::vector<ComplexField> slices)
      : times_(std::move(times)), slices_(std::move(slices)) {
    if (times_.empty() || times_.size() != slices_.size()) throw DomainError("space-time field needs one slice per time");
    const auto& g = slices_.front().grid();
    for (const auto& s : slices_) {
      if (!s.grid().same_as(g) || s.convention() != slices_.front().convention())
        throw DomainError("space-time slices live on different grids");
      if (s.components() != 1) throw DomainError("space-time fields are scalar");
    }
    if (times_.size() > 1) {
      const double dt = times_[1] - times_[0];
      for (size_t k = 1; k < times_.size(); ++k)
        if (std::abs(times_[k] - times_[k - 1] - dt) > 1e-12 * std::max(1.0, std::abs(times_[k])))
          throw DomainError("space-time field needs a uniform time grid");
    }
  }

  /// Samples f(t_k, x_j) at t_k = 2 pi k / nt, x_j = 2 pi j / N.
  static SpaceTimeField torus(const SpectralGrid& grid, int nt, const std::function<cplx(double, double)>& f) {
    std::vector<double> times(nt);
    std::vector<ComplexField> slices;
    slices.reserve(nt);
    for (int k = 0; k < nt; ++k) {
      times[k] = kTwoPi * k / nt;
      Eigen::MatrixXcd v(1, grid.size());
      for (int j = 0; j < grid.size(); ++j) v(0, j) = f(times[k], kTwoPi * j / grid.size());
      slices.emplace_back(grid, std::move(v), Convention::Torus);
    }
    return SpaceTimeField(std::move(times), std::move(slices));
  }

  const std::vector<double>& times() const { return times_; }
  const std::vector<ComplexField>& slices() const { return slices_; }
  const SpectralGrid& grid() const { return slices_.front().grid(); }
  int time_samples() const { return static_cast<int>(times_.size()); }

  /// Whether the samples cover one full 2 pi period of a torus field.
  bool is_torus_period() const {
    if (slices_.front().convention() != Convention::Torus || times_.size() < 2) return false;
    const double dt = times_[1] - times_[0];
    return std::abs(times_[0]) < 1e-14 && std::abs(dt * times_.size() - kTwoPi) < 1e-10;
  }

  /// Space-time L^p norm, rectangle rule in both variables.
  double lp_norm(double p) const {
    double s = 0.0;
    for (const auto& sl : slices_) s += std::pow(sl.lp_norm(p), p);
    const double w = is_torus_period() ? 1.0 / times_.size() : (times_.size() > 1 ? times_[1] - times_[0] : 1.0);
    return std::pow(s * w, 1.0 / p);
  }

 private:
  std::vector<double> times_;
  std::vector<ComplexField> slices_;
};

inline ComplexField free_propagate(const ComplexField& f, double t) {
  Eigen::MatrixXcd c = f.modes();
  for (int j = 0; j < f.size(); ++j) {
    const double k = f.wavenumber(j);
    c.col(j) *= std::polar(1.0, k * k * t);
  }
  Eigen::MatrixXcd v(c.rows(), c.cols());
  for (Eigen::Index r = 0; r < c.rows(); ++r) {
    std::vector<cplx> cr(c.cols());
    for (Eigen::Index j = 0; j < c.cols(); ++j) cr[j] = c(r, j);
    const auto vr = f.grid().synthesize(cr);
    for (Eigen::Index j = 0; j < c.cols(); ++j) v(r, j) = vr[j];
  }
  return ComplexField(f.grid(), std::move(v), f.convention());
}

namespace detail {

inline int next_power_of_two(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// ||sum_m c_m e^{i(mx + m^2 t)}||_{L^4(T^2)} with normalized measure. With
/// nt = 0 the quadrature uses 4x the highest temporal frequency of |.|^4 and
/// is exact; the spatial grid is padded so the rectangle rule is exact too.
inline double free_l4_norm(const std::vector<std::pair<int, cplx>>& modes, int nt) {
  if (modes.empty()) return 0.0;
  int mmax = 0;
  long fmin = std::numeric_limits<long>::max(), fmax = std::numeric_limits<long>::min();
  for (const auto& [m, c] : modes) {
    mmax = std::max(mmax, std::abs(m));
    fmin = std::min(fmin, long(m) * m);
    fmax = std::max(fmax, long(m) * m);
  }
  const long tfreq = 2 * (fmax - fmin);
  if (nt <= 0) nt = static_cast<int>(std::max(8L, 4 * tfreq));
  const int np = std::max(16, next_power_of_two(4 * mmax + 1));
  auto plans = plans_for(np);
  std::vector<cplx> c(np), v(np);
  double sum = 0.0;
  for (int k = 0; k < nt; ++k) {
    const double t = kTwoPi * k / nt;
    std::fill(c.begin(), c.end(), cplx(0.0));
    for (const auto& [m, cm] : modes) c[m >= 0 ? m : np + m] += cm * std::polar(1.0, double(m) * m * t);
    plans->backward(c.data(), v.data());
    for (const auto& z : v) sum += std::norm(z) * std::norm(z);
  }
  return std::pow(sum / (double(nt) * np), 0.25);
}

inline std::vector<std::pair<int, cplx>> torus_mode_list(const ComplexField& f) {
  const ComplexField g = to_torus(f);
  const Eigen::MatrixXcd c = g.modes();
  std::vector<std::pair<int, cplx>> out;
  for (int j = 0; j < g.size(); ++j)
    if (c(0, j) != cplx(0.0)) out.emplace_back(g.grid().mode(j), c(0, j));
  return out;
}

/// int_0^w e^{i omega tau} d tau.
inline cplx window_integral(double omega, double w) {
  const double h = 0.5 * omega * w;
  const double sinc = std::abs(h) < 1e-8 ? 1.0 - h * h / 6.0 : std::sin(h) / h;
  return w * sinc * std::polar(1.0, h);
}

/// Normalized 2-D coefficients a(n, m) of a torus space-time field, time mode
/// index n in DFT order along rows.
inline Eigen::MatrixXcd spacetime_modes(const SpaceTimeField& F) {
  if (!F.is_torus_period()) throw DomainError("needs torus samples over one full period");
  const int nt = F.time_samples(), nx = F.grid().size();
  Eigen::MatrixXcd a(nt, nx);
  for (int k = 0; k < nt; ++k) a.row(k) = F.slices()[k].modes().row(0);
  auto plans = plans_for(nt);
  std::vector<cplx> in(nt), out(nt);
  for (int j = 0; j < nx; ++j) {
    for (int k = 0; k < nt; ++k) in[k] = a(k, j);
    plans->forward(in.data(), out.data());
    for (int k = 0; k < nt; ++k) a(k, j) = out[k] / double(nt);
  }
  return a;
}

inline int signed_mode(int j, int n) { return j < (n + 1) / 2 ? j : j - n; }

}  // namespace detail

/// ||S(.) f||_{L^4(T x T)} / ||f||_{L^2(T)} over one time period, normalized
/// measures. time_samples = 0 picks an exact rule.
inline double strichartz_ratio(const ComplexField& f, int time_samples = 0) {
  if (f.components() != 1) throw DomainError("Strichartz ratio needs a scalar field");
  const auto modes = detail::torus_mode_list(f);
  double l2 = 0.0;
  for (const auto& [m, c] : modes) l2 += std::norm(c);
  l2 = std::sqrt(l2);
  if (!(l2 > 0.0)) throw DomainError("Strichartz ratio needs nonzero data");
  return detail::free_l4_norm(modes, time_samples) / l2;
}

/// (sum (|n - m^2| + 1)^{-3/4} |a_{m,n}|^2)^{1/2}.
inline double bourgain_weighted_norm(const SpaceTimeField& F) {
  const Eigen::MatrixXcd a = detail::spacetime_modes(F);
  const int nt = F.time_samples();
  double s = 0.0;
  for (int k = 0; k < nt; ++k) {
    const long n = detail::signed_mode(k, nt);
    for (int j = 0; j < a.cols(); ++j) {
      const long m = F.grid().mode(j);
      s += std::pow(double(std::labs(n - m * m) + 1), -0.75) * std::norm(a(k, j));
    }
  }
  return std::sqrt(s);
}

struct DuhamelResult {
  ComplexField value;       // int_0^{2 delta} S(t - tau) F(tau) d tau at the requested t
  double l4_norm = 0.0;     // of that integral as a function on T^2
  double source_norm = 0.0; // ||F||_{L^{4/3}(T^2)}
  double factor = 0.0;      // B^{-1/4} + delta B
  double bound = std::numeric_limits<double>::quiet_NaN();  // C factor ||F||, when C is known
  double ratio() const { return l4_norm / (factor * source_norm); }
};

/// Exact per space-time mode: the source's trigonometric interpolant is
/// integrated against the free propagator.
inline DuhamelResult duhamel_term(const SpaceTimeField& F, double t, double delta, double B,
                                  std::optional<double> C = std::nullopt) {
  if (!(delta > 0.0 && delta < 0.125)) throw DomainError("Duhamel cut-off delta must lie in (0, 1/8)");
  if (!(B > 0.0 && B < 1.0 / (100.0 * delta))) throw DomainError("mode cut-off B must lie in (0, 1/(100 delta))");
  const Eigen::MatrixXcd a = detail::spacetime_modes(F);
  const int nt = F.time_samples(), nx = F.grid().size();
  std::vector<std::pair<int, cplx>> g;
  std::vector<cplx> c(nx);
  for (int j = 0; j < nx; ++j) {
    const long m = F.grid().mode(j);
    cplx gm = 0.0;
    for (int k = 0; k < nt; ++k) {
      const long n = detail::signed_mode(k, nt);
      gm += a(k, j) * detail::window_integral(double(n - m * m), 2 * delta);
    }
    if (gm != cplx(0.0)) g.emplace_back(int(m), gm);
    c[j] = gm * std::polar(1.0, double(m) * m * t);
  }
  DuhamelResult r{ComplexField::scalar(F.grid(), F.grid().synthesize(c), Convention::Torus)};
  r.l4_norm = detail::free_l4_norm(g, 0);
  r.source_norm = F.lp_norm(4.0 / 3.0);
  r.factor = std::pow(B, -0.25) + delta * B;
  if (C) r.bound = *C * r.factor * r.source_norm;
  return r;
}

/// Safety factor applied to the largest observed Duhamel ratio.
inline constexpr double kDuhamelSafety = 1.2;

struct DuhamelSweepPoint {
  double delta, B;
};

/// C = safety * max ratio over the ensemble and the (delta, B) sweep.
inline double calibrate_duhamel_constant(const std::vector<SpaceTimeField>& ensemble,
                                         const std::vector<DuhamelSweepPoint>& sweep) {
  double worst = 0.0;
  for (const auto& F : ensemble)
    for (const auto& p : sweep) {
      const auto r = duhamel_term(F, 0.0, p.delta, p.B);
      if (r.source_norm > 0.0) worst = std::max(worst, r.ratio());
    }
  return kDuhamelSafety * worst;
}

// ---------------------------------------------------------------------------
// Forced evolution

/// Source F(psi, t) in one of three shapes. Potentials give exact sub-flows:
/// scalar V (F = V psi), or Hermitian n x n blocks M_j (F_j = M_j psi_j). A
/// generic source is integrated with one RK4 step per sub-flow.
struct Nonlinearity {
  std::function<std::vector<double>(const ComplexField&, double)> potential;
  std::function<std::vector<Eigen::MatrixXcd>(const ComplexField&, double)> matrix_potential;
  std::function<Eigen::MatrixXcd(const ComplexField&, double)> source;

  bool empty() const { return !potential && !matrix_potential && !source; }

  Eigen::MatrixXcd rhs(const ComplexField& psi, double t) const {
    Eigen::MatrixXcd F = Eigen::MatrixXcd::Zero(psi.components(), psi.size());
    if (potential) {
      const auto V = potential(psi, t);
      for (int j = 0; j < psi.size(); ++j) F.col(j) = V[j] * psi.values().col(j);
    } else if (matrix_potential) {
      const auto M = matrix_potential(psi, t);
      for (int j = 0; j < psi.size(); ++j) F.col(j) = M[j] * psi.values().col(j);
    } else if (source) {
      F = source(psi, t);
    }
    return F;
  }
};

/// i phi_t = phi_xx + c |phi|^2 phi.
inline Nonlinearity cubic(double c) {
  Nonlinearity nl;
  nl.potential = [c](const ComplexField& psi, double) {
    std::vector<double> V(psi.size());
    for (int j = 0; j < psi.size(); ++j) V[j] = c * psi.values().col(j).squaredNorm();
    return V;
  };
  return nl;
}

struct SplitStepOptions {
  double max_dt = std::numeric_limits<double>::infinity();
};

namespace detail {

inline void check_finite(const Eigen::MatrixXcd& v, const SpectralGrid& grid, double t, double dt, const char* stage) {
  if (v.allFinite()) return;
  std::ostringstream d;
  d << "stage=" << stage << " t=" << t << " dt=" << dt << " N=" << grid.size();
  double peak = 0.0;
  int bad = 0;
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    if (!v.col(j).allFinite()) {
      ++bad;
    } else {
      peak = std::max(peak, v.col(j).norm());
    }
  }
  d << " nonfinite_samples=" << bad << " finite_peak=" << peak;
  throw BlowUpSuspected("non-finite field in split step; refine N and dt", d.str());
}

/// psi after time h of i psi_t = F(psi, t0).
inline Eigen::MatrixXcd nonlinear_flow(const ComplexField& psi, double t0, double h, const Nonlinearity& nl) {
  if (nl.potential) {
    const auto V = nl.potential(psi, t0);
    Eigen::MatrixXcd out = psi.values();
    for (int j = 0; j < psi.size(); ++j) out.col(j) *= std::polar(1.0, -V[j] * h);
    return out;
  }
  if (nl.matrix_potential) {
    const auto M = nl.matrix_potential(psi, t0);
    Eigen::MatrixXcd out = psi.values();
    for (int j = 0; j < psi.size(); ++j) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(M[j]);
      const Eigen::VectorXcd ph = (es.eigenvalues() * -h).unaryExpr([](double a) { return std::polar(1.0, a); });
      out.col(j) = es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint() * out.col(j);
    }
    return out;
  }
  if (nl.source) {
    const cplx mi(0.0, -1.0);
    const auto f = [&](const Eigen::MatrixXcd& v, double t) {
      if (!v.allFinite()) return Eigen::MatrixXcd(v);
      return Eigen::MatrixXcd(mi * nl.source(ComplexField(psi.grid(), v, psi.convention()), t));
    };
    const Eigen::MatrixXcd& y = psi.values();
    const Eigen::MatrixXcd k1 = f(y, t0);
    const Eigen::MatrixXcd k2 = f(y + 0.5 * h * k1, t0 + 0.5 * h);
    const Eigen::MatrixXcd k3 = f(y + 0.5 * h * k2, t0 + 0.5 * h);
    const Eigen::MatrixXcd k4 = f(y + h * k3, t0 + h);
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return psi.values();
}

}  // namespace detail

/// One Strang step from t to t + dt: half source flow with the source frozen
/// at t, free step, half source flow frozen at t + dt.
inline ComplexField split_step(const ComplexField& phi, double dt, const Nonlinearity& nl, double t = 0.0,
                               const SplitStepOptions& opt = {}) {
  if (std::abs(dt) > opt.max_dt) throw RejectedStep("split step above the configured limit", opt.max_dt);
  if (nl.empty()) return free_propagate(phi, dt);
  Eigen::MatrixXcd v = detail::nonlinear_flow(phi, t, 0.5 * dt, nl);
  detail::check_finite(v, phi.grid(), t, dt, "first half");
  ComplexField mid = free_propagate(ComplexField(phi.grid(), std::move(v), phi.convention()), dt);
  v = detail::nonlinear_flow(mid, t + dt, 0.5 * dt, nl);
  detail::check_finite(v, phi.grid(), t, dt, "second half");
  return ComplexField(phi.grid(), std::move(v), phi.convention());
}

inline ComplexField split_step_evolve(ComplexField phi, double dt, int steps, const Nonlinearity& nl, double t0 = 0.0,
                                      const SplitStepOptions& opt = {}) {
  for (int k = 0; k < steps; ++k) phi = split_step(phi, dt, nl, t0 + k * dt, opt);
  return phi;
}

struct PicardOptions {
  int time_steps = 64;
  int max_iters = 50;
  double tol = 1e-12;
};

struct PicardResult {
  SpaceTimeField solution;
  std::vector<double> differences;  // sup_t ||phi_k - phi_{k-1}||_{L^2}
  std::vector<double> factors;      // differences[k] / differences[k-1]
  int iterations = 0;
};

namespace detail {

/// (1/h) int_0^h e^{-i lam u} {1 - u/h, u/h} du times h: weights of the
/// left and right samples of a linear interpolant.
inline std::pair<cplx, cplx> filon_weights(double lam, double h) {
  const cplx z(0.0, -lam * h);
  cplx e0, e1;
  if (std::abs(z) < 0.5) {
    cplx zp = 1.0;
    double fact = 1.0;
    e0 = e1 = 0.0;
    for (int j = 0; j < 24; ++j) {
      if (j > 0) {
        zp *= z;
        fact *= j;
      }
      e0 += zp / (fact * (j + 1));
      e1 += zp / (fact * (j + 2));
    }
  } else {
    const cplx ez = std::exp(z);
    e0 = (ez - 1.0) / z;
    e1 = (ez * (z - 1.0) + 1.0) / (z * z);
  }
  return {h * (e0 - e1), h * e1};
}

}  // namespace detail

/// Fixed point of the Duhamel map
///   phi(t) = S(t) phi0 - i int_0^t S(t - tau) F(phi(tau), tau) d tau
/// on [0, 2 delta], starting from the free solution. The time integral uses a
/// piecewise-linear source and exact oscillatory weights per mode.
inline PicardResult picard_iterate(const ComplexField& phi0, const Nonlinearity& nl, double delta,
                                   const PicardOptions& opt = {}) {
  if (!(delta > 0.0 && delta < 0.125)) throw DomainError("Picard window delta must lie in (0, 1/8)");
  if (phi0.components() != 1) throw DomainError("Picard iteration needs a scalar field");
  const int M = opt.time_steps, N = phi0.size();
  const double h = 2 * delta / M;
  std::vector<double> times(M + 1);
  for (int i = 0; i <= M; ++i) times[i] = i * h;
  const auto c0 = phi0.modes();
  std::vector<ComplexField> cur;
  cur.reserve(M + 1);
  for (int i = 0; i <= M; ++i) cur.push_back(free_propagate(phi0, times[i]));

  std::vector<std::pair<cplx, cplx>> w(N);
  std::vector<double> lam(N);
  for (int j = 0; j < N; ++j) {
    const double k = phi0.wavenumber(j);
    lam[j] = k * k;
    w[j] = detail::filon_weights(lam[j], h);
  }

  PicardResult res{SpaceTimeField(times, cur), {}, {}, 0};
  for (int it = 1; it <= opt.max_iters; ++it) {
    std::vector<std::vector<cplx>> Fh(M + 1);
    for (int i = 0; i <= M; ++i) {
      const Eigen::MatrixXcd F = nl.rhs(cur[i], times[i]);
      std::vector<cplx> row(N);
      for (int j = 0; j < N; ++j) row[j] = F(0, j);
      Fh[i] = phi0.grid().coefficients(row);
    }
    std::vector<ComplexField> next;
    next.reserve(M + 1);
    std::vector<cplx> acc(N, cplx(0.0)), c(N);
    double diff = 0.0;
    for (int i = 0; i <= M; ++i) {
      if (i > 0)
        for (int j = 0; j < N; ++j) {
          const cplx rot = std::polar(1.0, -lam[j] * times[i - 1]);
          acc[j] += rot * (w[j].first * Fh[i - 1][j] + w[j].second * Fh[i][j]);
        }
      for (int j = 0; j < N; ++j) c[j] = std::polar(1.0, lam[j] * times[i]) * (c0(0, j) - cplx(0.0, 1.0) * acc[j]);
      next.push_back(ComplexField::scalar(phi0.grid(), phi0.grid().synthesize(c), phi0.convention()));
      Eigen::MatrixXcd d = next.back().values() - cur[i].values();
      diff = std::max(diff, std::sqrt(d.squaredNorm() * phi0.measure()));
    }
    cur = std::move(next);
    res.iterations = it;
    if (!res.differences.empty())
      res.factors.push_back(res.differences.back() > 0.0 ? diff / res.differences.back() : 0.0);
    res.differences.push_back(diff);
    if (!std::isfinite(diff)) break;
    if (diff <= opt.tol) {
      res.solution = SpaceTimeField(times, cur);
      return res;
    }
  }
  throw NoConvergence("Duhamel map did not contract to tolerance", res.factors);
}

}  // namespace smflow
