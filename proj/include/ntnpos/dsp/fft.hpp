#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace ntnpos::dsp {

using cplx = std::complex<double>;

/// Thin FFTW wrapper with a process-wide plan cache. Plan creation is
/// serialized (FFTW requirement); execution on caller buffers is not.
class Fft {
 public:
  static void forward(cplx* data, size_t n) { exec(data, n, FFTW_FORWARD); }
  static void inverse(cplx* data, size_t n) {
    exec(data, n, FFTW_BACKWARD);
    const double s = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) data[i] *= s;
  }
  static void forward(std::vector<cplx>& v) { forward(v.data(), v.size()); }
  static void inverse(std::vector<cplx>& v) { inverse(v.data(), v.size()); }

  /// Inverse transform without the 1/n scaling (correlation hot path).
  static void inverse_unscaled(cplx* data, size_t n) { exec(data, n, FFTW_BACKWARD); }

  static size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
  }

 private:
  static void exec(cplx* data, size_t n, int sign) {
    if (n == 0) throw std::invalid_argument("fft: empty input");
    fftw_plan plan = get_plan(n, sign);
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(data),
                     reinterpret_cast<fftw_complex*>(data));
  }

  static fftw_plan get_plan(size_t n, int sign) {
    static std::mutex mu;
    static std::map<std::pair<size_t, int>, fftw_plan> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find({n, sign});
    if (it != cache.end()) return it->second;
    std::vector<cplx> scratch(n);
    fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n),
                                      reinterpret_cast<fftw_complex*>(scratch.data()),
                                      reinterpret_cast<fftw_complex*>(scratch.data()),
                                      sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    cache.emplace(std::pair<size_t, int>{n, sign}, plan);
    return plan;
  }
};

}  // namespace ntnpos::dsp
