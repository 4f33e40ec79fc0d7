#pragma once

// Uniform periodic grids and Fourier-based operations on them.
//
// A grid is either the unit circle (period 1, samples x_j = j/N) or a
// truncated line [-L, L) treated as periodic (samples x_j = -L + j dx).
// Mode ordering follows FFTW: index j carries integer frequency
// m = j for j < N/2 and m = j - N otherwise, so m ranges over [-N/2, N/2).

#include <fftw3.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "smflow/errors.hpp"

namespace smflow {

using cplx = std::complex<double>;
inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum class DomainKind { Circle, Line };

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Forward/backward plans for one transform size. Execution through the
// new-array interface is thread-safe; only planning needs the lock.
class FftPlans {
 public:
  explicit FftPlans(int n) : n_(n) {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    auto* a = fftw_alloc_complex(static_cast<size_t>(n));
    auto* b = fftw_alloc_complex(static_cast<size_t>(n));
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    forward_ = fftw_plan_dft_1d(n, a, b, FFTW_FORWARD, flags);
    backward_ = fftw_plan_dft_1d(n, a, b, FFTW_BACKWARD, flags);
    fftw_free(a);
    fftw_free(b);
  }
  FftPlans(const FftPlans&) = delete;
  FftPlans& operator=(const FftPlans&) = delete;
  ~FftPlans() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  int size() const { return n_; }

  void forward(const cplx* in, cplx* out) const {
    fftw_execute_dft(forward_, to_fftw(in), reinterpret_cast<fftw_complex*>(out));
  }
  void backward(const cplx* in, cplx* out) const {
    fftw_execute_dft(backward_, to_fftw(in), reinterpret_cast<fftw_complex*>(out));
  }

 private:
  static fftw_complex* to_fftw(const cplx* p) {
    return reinterpret_cast<fftw_complex*>(const_cast<cplx*>(p));
  }
  int n_;
  fftw_plan forward_{};
  fftw_plan backward_{};
};

inline std::shared_ptr<const FftPlans> plans_for(int n) {
  static std::mutex cache_mutex;
  static std::map<int, std::shared_ptr<const FftPlans>> cache;
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto plans = std::make_shared<const FftPlans>(n);
  cache.emplace(n, plans);
  return plans;
}

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace detail

class SpectralGrid {
 public:
  static SpectralGrid circle(int n) { return SpectralGrid(n, DomainKind::Circle, 0.5); }
  static SpectralGrid line(int n, double half_width) {
    if (!(half_width > 0.0)) throw DomainError("line half-width must be positive");
    return SpectralGrid(n, DomainKind::Line, half_width);
  }

  int size() const { return n_; }
  DomainKind kind() const { return kind_; }
  bool is_circle() const { return kind_ == DomainKind::Circle; }
  double half_width() const { return half_width_; }
  double length() const { return is_circle() ? 1.0 : 2.0 * half_width_; }
  double dx() const { return length() / n_; }
  double origin() const { return is_circle() ? 0.0 : -half_width_; }
  double x(int j) const { return origin() + j * dx(); }

  int mode(int j) const { return j < n_ / 2 ? j : j - n_; }
  double wavenumber(int j) const { return kTwoPi * mode(j) / length(); }

  /// Unnormalized DFT.
  void forward(std::span<const cplx> in, std::span<cplx> out) const {
    plans_->forward(in.data(), out.data());
  }
  /// Inverse DFT including the 1/N factor.
  void inverse(std::span<const cplx> in, std::span<cplx> out) const {
    plans_->backward(in.data(), out.data());
    const double s = 1.0 / n_;
    for (auto& v : out) v *= s;
  }

  std::vector<cplx> coefficients(std::span<const cplx> f) const {
    std::vector<cplx> c(n_);
    forward(f, c);
    for (auto& v : c) v /= static_cast<double>(n_);
    return c;
  }
  std::vector<cplx> synthesize(std::span<const cplx> c) const {
    std::vector<cplx> f(n_);
    plans_->backward(c.data(), f.data());
    return f;
  }

  /// Spectral derivative of the given order. The Nyquist mode is dropped for
  /// odd orders so real input stays real.
  std::vector<cplx> derivative(std::span<const cplx> f, int order = 1) const {
    std::vector<cplx> c(n_);
    forward(f, c);
    apply_derivative_multiplier(c, order);
    std::vector<cplx> out(n_);
    inverse(c, out);
    return out;
  }

  std::vector<double> derivative(std::span<const double> f, int order = 1) const {
    std::vector<cplx> z(f.begin(), f.end());
    auto d = derivative(std::span<const cplx>(z), order);
    std::vector<double> out(n_);
    for (int j = 0; j < n_; ++j) out[j] = d[j].real();
    return out;
  }

  /// Differentiates every row of a (fields x N) matrix. Two real rows share
  /// one complex transform.
  Eigen::MatrixXd derivative_rows(const Eigen::MatrixXd& rows, int order = 1) const {
    Eigen::MatrixXd out(rows.rows(), rows.cols());
    std::vector<cplx> buf(n_), c(n_);
    for (Eigen::Index r = 0; r < rows.rows(); r += 2) {
      const bool pair = r + 1 < rows.rows();
      for (int j = 0; j < n_; ++j) buf[j] = cplx(rows(r, j), pair ? rows(r + 1, j) : 0.0);
      forward(buf, c);
      apply_derivative_multiplier(c, order);
      inverse(c, buf);
      for (int j = 0; j < n_; ++j) {
        out(r, j) = buf[j].real();
        if (pair) out(r + 1, j) = buf[j].imag();
      }
    }
    return out;
  }

  /// First and second derivatives of every row from one forward transform.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> derivative_rows12(const Eigen::MatrixXd& rows) const {
    Eigen::MatrixXd d1(rows.rows(), rows.cols()), d2(rows.rows(), rows.cols());
    std::vector<cplx> buf(n_), c(n_), c1(n_);
    for (Eigen::Index r = 0; r < rows.rows(); r += 2) {
      const bool pair = r + 1 < rows.rows();
      for (int j = 0; j < n_; ++j) buf[j] = cplx(rows(r, j), pair ? rows(r + 1, j) : 0.0);
      forward(buf, c);
      for (int j = 0; j < n_; ++j) {
        const double k = wavenumber(j);
        c1[j] = j == n_ / 2 ? cplx(0.0) : c[j] * cplx(0.0, k);
        c[j] *= -k * k;
      }
      inverse(c1, buf);
      for (int j = 0; j < n_; ++j) {
        d1(r, j) = buf[j].real();
        if (pair) d1(r + 1, j) = buf[j].imag();
      }
      inverse(c, buf);
      for (int j = 0; j < n_; ++j) {
        d2(r, j) = buf[j].real();
        if (pair) d2(r + 1, j) = buf[j].imag();
      }
    }
    return {std::move(d1), std::move(d2)};
  }

  /// g(x) = f(x + s) for the trigonometric interpolant of f.
  std::vector<cplx> shift(std::span<const cplx> f, double s) const {
    std::vector<cplx> c(n_);
    forward(f, c);
    for (int j = 0; j < n_; ++j) {
      const double k = wavenumber(j);
      if (j == n_ / 2) {
        c[j] *= std::cos(k * s);
      } else {
        c[j] *= std::polar(1.0, k * s);
      }
    }
    std::vector<cplx> out(n_);
    inverse(c, out);
    return out;
  }

  std::vector<double> shift(std::span<const double> f, double s) const {
    std::vector<cplx> z(f.begin(), f.end());
    auto g = shift(std::span<const cplx>(z), s);
    std::vector<double> out(n_);
    for (int j = 0; j < n_; ++j) out[j] = g[j].real();
    return out;
  }

  /// Value of the trigonometric interpolant at an arbitrary point.
  cplx evaluate(std::span<const cplx> f, double xpos) const {
    const auto c = coefficients(f);
    const double t = xpos - origin();
    cplx sum = 0.0;
    for (int j = 0; j < n_; ++j) {
      const double k = wavenumber(j);
      if (j == n_ / 2) {
        sum += c[j] * std::cos(k * t);
      } else {
        sum += c[j] * std::polar(1.0, k * t);
      }
    }
    return sum;
  }

  /// Spectral upsampling of each row to factor*N samples on the same period.
  Eigen::MatrixXd refine_rows(const Eigen::MatrixXd& rows, int factor) const {
    const int m = n_ * factor;
    auto fine = detail::plans_for(m);
    Eigen::MatrixXd out(rows.rows(), m);
    std::vector<cplx> buf(n_), c(n_), big(m), vals(m);
    for (Eigen::Index r = 0; r < rows.rows(); r += 2) {
      const bool pair = r + 1 < rows.rows();
      for (int j = 0; j < n_; ++j) buf[j] = cplx(rows(r, j), pair ? rows(r + 1, j) : 0.0);
      forward(buf, c);
      std::fill(big.begin(), big.end(), cplx(0.0));
      for (int j = 0; j < n_; ++j) {
        const int md = mode(j);
        if (j == n_ / 2) {
          big[n_ / 2] += 0.5 * c[j];
          big[m - n_ / 2] += 0.5 * c[j];
        } else {
          big[md >= 0 ? md : m + md] += c[j];
        }
      }
      fine->backward(big.data(), vals.data());
      for (int j = 0; j < m; ++j) {
        const cplx v = vals[j] / static_cast<double>(n_);
        out(r, j) = v.real();
        if (pair) out(r + 1, j) = v.imag();
      }
    }
    return out;
  }

  /// Periodic rectangle rule (spectrally accurate for smooth periodic data).
  double integrate(std::span<const double> f) const {
    double s = 0.0;
    for (double v : f) s += v;
    return s * dx();
  }
  cplx integrate(std::span<const cplx> f) const {
    cplx s = 0.0;
    for (cplx v : f) s += v;
    return s * dx();
  }

  /// Zero-mean periodic antiderivative of f - mean(f), pinned to 0 at x_0.
  std::vector<double> periodic_antiderivative(std::span<const double> f) const {
    std::vector<cplx> z(f.begin(), f.end()), c(n_);
    forward(z, c);
    c[0] = 0.0;
    if (n_ % 2 == 0) c[n_ / 2] = 0.0;
    for (int j = 1; j < n_; ++j) {
      if (j == n_ / 2) continue;
      c[j] /= cplx(0.0, wavenumber(j));
    }
    std::vector<cplx> g(n_);
    inverse(c, g);
    std::vector<double> out(n_);
    for (int j = 0; j < n_; ++j) out[j] = g[j].real() - g[0].real();
    return out;
  }

  bool same_as(const SpectralGrid& o) const {
    return n_ == o.n_ && kind_ == o.kind_ && half_width_ == o.half_width_;
  }

 private:
  SpectralGrid(int n, DomainKind kind, double half_width)
      : n_(n), kind_(kind), half_width_(half_width) {
    if (!detail::is_power_of_two(n) || n < 16)
      throw DomainError("grid size must be a power of two >= 16");
    plans_ = detail::plans_for(n);
  }

  void apply_derivative_multiplier(std::vector<cplx>& c, int order) const {
    for (int j = 0; j < n_; ++j) {
      if (j == n_ / 2 && order % 2 == 1) {
        c[j] = 0.0;
        continue;
      }
      const cplx ik(0.0, wavenumber(j));
      c[j] *= std::pow(ik, order);
    }
  }

  int n_;
  DomainKind kind_;
  double half_width_;
  std::shared_ptr<const detail::FftPlans> plans_;
};

}  // namespace smflow
