#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "ntnpos/constants.hpp"

namespace ntnpos::dsp {

using cplx = std::complex<double>;

namespace detail {
inline double bessel_i0(double x) {
  // series expansion, converges quickly for the beta range used here
  double sum = 1.0, term = 1.0;
  const double hx = 0.5 * x;
  for (int k = 1; k < 50; ++k) {
    term *= (hx / k) * (hx / k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}
}  // namespace detail

/// Kaiser-windowed sinc fractional interpolator with a polyphase tap table.
/// Positions are expressed in input-sample units. The kernel cutoff is kept
/// below Nyquist so band-limited signals reconstruct with roughly -60 dB
/// interpolation error.
class SincInterpolator {
 public:
  explicit SincInterpolator(int taps = 32, double beta = 9.0, double cutoff = 0.45)
      : taps_(taps), cutoff_(cutoff) {
    if (taps < 4 || taps % 2 != 0) throw std::invalid_argument("interpolator: taps must be even and >= 4");
    table_.resize(static_cast<size_t>(kPhases + 1) * taps_);
    const double i0b = detail::bessel_i0(beta);
    const double half = taps_ / 2.0;
    for (int p = 0; p <= kPhases; ++p) {
      const double frac = static_cast<double>(p) / kPhases;
      double sum = 0.0;
      for (int k = 0; k < taps_; ++k) {
        // tap k multiplies x[i0 + k] where i0 = floor(pos) - taps/2 + 1
        const double t = (k - (taps_ / 2 - 1)) - frac;  // offset from pos
        const double w = std::abs(t) < half
                             ? detail::bessel_i0(beta * std::sqrt(1.0 - (t / half) * (t / half))) / i0b
                             : 0.0;
        const double s = (t == 0.0) ? 1.0 : std::sin(kTwoPi * cutoff_ * t) / (kTwoPi * cutoff_ * t);
        table_[static_cast<size_t>(p) * taps_ + k] = 2.0 * cutoff_ * s * w;
      }
      // normalize each phase row to unit DC gain
      for (int k = 0; k < taps_; ++k) sum += table_[static_cast<size_t>(p) * taps_ + k];
      for (int k = 0; k < taps_; ++k) table_[static_cast<size_t>(p) * taps_ + k] /= sum;
    }
  }

  int taps() const { return taps_; }
  double cutoff() const { return cutoff_; }

  /// Band-limited evaluation of x at fractional position pos (input samples).
  /// Samples outside [0, n) are treated as zero.
  cplx interp(const cplx* x, size_t n, double pos) const {
    const double fl = std::floor(pos);
    const int i0 = static_cast<int>(fl) - (taps_ / 2 - 1);
    const double frac = pos - fl;
    const double pf = frac * kPhases;
    const int p = static_cast<int>(pf);
    const double blend = pf - p;
    const double* h0 = &table_[static_cast<size_t>(p) * taps_];
    const double* h1 = &table_[static_cast<size_t>(p + 1) * taps_];
    cplx acc = 0.0;
    const int lo = std::max(0, -i0);
    const int hi = std::min(taps_, static_cast<int>(n) - i0);
    for (int k = lo; k < hi; ++k) {
      const double h = h0[k] + blend * (h1[k] - h0[k]);
      acc += h * x[static_cast<size_t>(i0 + k)];
    }
    return acc;
  }

  cplx interp(const std::vector<cplx>& x, double pos) const {
    return interp(x.data(), x.size(), pos);
  }

 private:
  static constexpr int kPhases = 512;
  int taps_;
  double cutoff_;
  std::vector<double> table_;
};

/// Shared default interpolator (immutable after construction).
inline const SincInterpolator& default_interpolator() {
  static const SincInterpolator interp;
  return interp;
}

}  // namespace ntnpos::dsp
