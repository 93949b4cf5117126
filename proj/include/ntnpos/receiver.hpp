#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "ntnpos/channel.hpp"
#include "ntnpos/dsp/fft.hpp"
#include "ntnpos/dsp/resample.hpp"
#include "ntnpos/prs.hpp"
#include "ntnpos/rng.hpp"

namespace ntnpos {

/// Delay/Doppler hypothesis grid for blind acquisition. Delay bounds are in
/// receive samples relative to the nominal start of the satellite's TDM slot
/// in the buffer; Doppler hypotheses span [min,max] at roughly step spacing
/// (the coarse search snaps them to exact FFT-bin frequency shifts).
struct SearchGrid {
  double doppler_min_hz = -45e3;
  double doppler_max_hz = 45e3;
  double doppler_step_hz = 500.0;
  double delay_min_samples = 0.0;
  double delay_max_samples = 0.0;
  double fine_doppler_step_hz = 50.0;
  int fine_delay_oversample = 16;

  void validate() const {
    if (!(doppler_step_hz > 0.0) || !(fine_doppler_step_hz > 0.0))
      throw std::invalid_argument("search grid: doppler steps must be positive");
    if (!(doppler_max_hz >= doppler_min_hz))
      throw std::invalid_argument("search grid: empty doppler span");
    if (!(delay_max_samples >= delay_min_samples))
      throw std::invalid_argument("search grid: empty delay span");
    if (fine_delay_oversample < 1)
      throw std::invalid_argument("search grid: oversample factor must be >= 1");
  }

  int n_doppler() const {
    return static_cast<int>(std::floor((doppler_max_hz - doppler_min_hz) / doppler_step_hz)) + 1;
  }
};

enum class Combining { NonCoherent, Coherent };

struct DetectionConfig {
  double pfa = 0.001;
  double threshold_gamma = 0.0;  // in units of the per-bin noise power (calibrated)
  Combining combining = Combining::NonCoherent;
  int n_ports = 1;

  void validate() const {
    if (!(pfa > 0.0) || pfa > 1.0) throw std::invalid_argument("detection: pfa must be in (0,1]");
    if (threshold_gamma < 0.0) throw std::invalid_argument("detection: threshold must be >= 0");
    if (n_ports != 1 && n_ports != 2)
      throw std::invalid_argument("detection: n_ports must be 1 or 2");
  }
};

struct Measurement {
  SatId sat_id;
  bool detected = false;
  double toa_s = std::numeric_limits<double>::quiet_NaN();       // receiver-clock arrival time
  double doppler_hz = std::numeric_limits<double>::quiet_NaN();
  double snr_est_db = std::numeric_limits<double>::quiet_NaN();  // in-band estimate from peak/floor
  int occasion_index = 0;
  double latency_s = 0.0;  // time since search start
  double peak_stat = 0.0;  // peak of the combined statistic, noise-normalized
};

/// Element-wise port combining of complex correlation values:
/// non-coherent = sum of |.|^2, coherent = |sum|^2.
inline std::vector<double> combine_ports(const std::vector<std::vector<cplx>>& per_port,
                                         Combining mode) {
  if (per_port.empty()) throw std::invalid_argument("combine_ports: no ports");
  const size_t n = per_port.front().size();
  for (const auto& row : per_port)
    if (row.size() != n) throw std::invalid_argument("combine_ports: shape mismatch");
  std::vector<double> out(n, 0.0);
  if (mode == Combining::NonCoherent) {
    for (const auto& row : per_port)
      for (size_t i = 0; i < n; ++i) out[i] += std::norm(row[i]);
  } else {
    for (size_t i = 0; i < n; ++i) {
      cplx acc = 0.0;
      for (const auto& row : per_port) acc += row[i];
      out[i] = std::norm(acc);
    }
  }
  return out;
}

/// Band-limited resampling of a buffer onto a different sampling rate
/// (replica preparation: tx-rate PRS -> receiver rate).
inline std::vector<cplx> resample_to_rate(const BasebandBuffer& in, double out_rate_hz) {
  if (!(out_rate_hz > 0.0)) throw std::invalid_argument("resample_to_rate: bad rate");
  const auto& interp = dsp::default_interpolator();
  const size_t out_len =
      static_cast<size_t>(std::floor(in.duration_s() * out_rate_hz));
  std::vector<cplx> out(out_len);
  const double ratio = in.sample_rate_hz / out_rate_hz;
  for (size_t n = 0; n < out_len; ++n)
    out[n] = interp.interp(in.samples.data(), in.samples.size(), static_cast<double>(n) * ratio);
  return out;
}

namespace detail {

// median of a Gamma(p,1) combined noise statistic, used to turn the window
// median into an unbiased per-bin noise-power estimate
inline double combined_median_const(Combining mode, int n_ports) {
  if (mode == Combining::Coherent) return 0.6931471805599453 * n_ports;
  return n_ports == 2 ? 1.6783469900166605 : 0.6931471805599453;
}

// conjugated replica rotated to a Doppler hypothesis: out[t] =
// conj(replica[t]) * exp(-j 2 pi fd t / fs). The unit phasor advances by a
// complex recurrence, re-anchored to an exact value every 1024 samples so the
// accumulated rounding stays below 1e-12.
inline void rotate_replica(const std::vector<cplx>& replica, double fd_hz, double fs,
                           std::vector<cplx>& out) {
  out.resize(replica.size());
  const double w = kTwoPi * fd_hz / fs;
  const cplx step = std::polar(1.0, -w);
  cplx rot(1.0, 0.0);
  for (size_t t = 0; t < replica.size(); ++t) {
    if ((t & 1023u) == 0u) rot = std::polar(1.0, -w * static_cast<double>(t));
    out[t] = std::conj(replica[t]) * rot;
    rot *= step;
  }
}

// plain dot product of one port against a pre-rotated conjugated replica
inline cplx dot_rotated(const std::vector<cplx>& x, long d, const std::vector<cplx>& rot) {
  cplx acc = 0.0;
  const long n = static_cast<long>(x.size());
  for (size_t t = 0; t < rot.size(); ++t) {
    const long i = d + static_cast<long>(t);
    if (i < 0 || i >= n) continue;
    acc += x[static_cast<size_t>(i)] * rot[t];
  }
  return acc;
}

// direct correlation of one port against the replica at integer lag d with an
// exact Doppler rotation
inline cplx dot_correlate(const std::vector<cplx>& x, long d, const std::vector<cplx>& replica,
                          double fd_hz, double fs) {
  thread_local std::vector<cplx> rot;
  rotate_replica(replica, fd_hz, fs, rot);
  return dot_rotated(x, d, rot);
}

// 3-point parabolic peak refinement; returns fractional offset in [-0.5, 0.5]
inline double parabolic_offset(double ym, double y0, double yp) {
  const double den = ym - 2.0 * y0 + yp;
  if (std::abs(den) < 1e-300) return 0.0;
  return std::clamp(0.5 * (ym - yp) / den, -0.5, 0.5);
}

}  // namespace detail

/// Result of one delay/Doppler search (relative to the buffer epoch).
struct SearchResult {
  bool detected = false;
  double delay_samples = 0.0;  // refined lag relative to the buffer start
  double doppler_hz = 0.0;
  double peak_stat = 0.0;      // noise-normalized peak of the combined statistic
  double snr_est_db = std::numeric_limits<double>::quiet_NaN();
};

/// FFT-based parallel code-phase search: correlates all ports against the
/// replica for every Doppler hypothesis (as exact integer-bin frequency shifts
/// of the replica spectrum), combines ports, normalizes by a median-based
/// noise-floor estimate over the searched bins, and refines the winning peak
/// (3-point parabolic lag interpolation; fine Doppler by direct correlation).
inline SearchResult correlate_search(const std::vector<const BasebandBuffer*>& ports,
                                     const std::vector<cplx>& replica, const SearchGrid& grid,
                                     const DetectionConfig& cfg, double occupied_bw_hz) {
  grid.validate();
  cfg.validate();
  if (ports.empty() || static_cast<int>(ports.size()) != cfg.n_ports)
    throw std::invalid_argument("correlate_search: port count mismatch");
  if (replica.empty()) throw std::invalid_argument("correlate_search: empty replica");
  const double fs = ports.front()->sample_rate_hz;
  const size_t lx = ports.front()->samples.size();
  for (const auto* p : ports)
    if (p->samples.size() != lx || std::abs(p->sample_rate_hz - fs) > 1e-6)
      throw std::invalid_argument("correlate_search: port buffers must share grid");

  const long d0 = std::max<long>(0, static_cast<long>(std::floor(grid.delay_min_samples)));
  const long d1 = std::min<long>(static_cast<long>(lx) - 1,
                                 static_cast<long>(std::ceil(grid.delay_max_samples)));
  if (d1 < d0) throw std::invalid_argument("correlate_search: delay window outside buffer");
  const size_t n = dsp::Fft::next_pow2(lx + replica.size());

  // per-port received spectra and the replica spectrum
  std::vector<std::vector<cplx>> xf(ports.size(), std::vector<cplx>(n, cplx(0.0)));
  for (size_t p = 0; p < ports.size(); ++p) {
    std::copy(ports[p]->samples.begin(), ports[p]->samples.end(), xf[p].begin());
    dsp::Fft::forward(xf[p]);
  }
  std::vector<cplx> rf(n, cplx(0.0));
  std::copy(replica.begin(), replica.end(), rf.begin());
  dsp::Fft::forward(rf);

  // Doppler hypotheses snapped to integer spectral bins (deduplicated)
  std::vector<long> bins;
  for (int h = 0; h < grid.n_doppler(); ++h) {
    const double fd = grid.doppler_min_hz + h * grid.doppler_step_hz;
    const long m = std::lround(fd * static_cast<double>(n) / fs);
    if (bins.empty() || bins.back() != m) bins.push_back(m);
  }

  const size_t wlen = static_cast<size_t>(d1 - d0 + 1);
  std::vector<double> all_stats;
  all_stats.reserve(bins.size() * wlen);
  std::vector<std::vector<cplx>> c(ports.size(), std::vector<cplx>(n));
  double best = -1.0;
  long best_d = d0, best_m = 0;
  size_t best_hyp_index = 0;
  std::vector<double> stat(wlen);
  for (size_t hi = 0; hi < bins.size(); ++hi) {
    const long m = bins[hi];
    for (size_t p = 0; p < ports.size(); ++p) {
      auto& cp = c[p];
      for (size_t k = 0; k < n; ++k) {
        const size_t ks = static_cast<size_t>((static_cast<long>(k) - m % static_cast<long>(n) +
                                               static_cast<long>(n)) %
                                              static_cast<long>(n));
        cp[k] = xf[p][k] * std::conj(rf[ks]);
      }
      dsp::Fft::inverse_unscaled(cp.data(), cp.size());
    }
    for (size_t i = 0; i < wlen; ++i) {
      double s = 0.0;
      if (cfg.combining == Combining::NonCoherent) {
        for (size_t p = 0; p < ports.size(); ++p) s += std::norm(c[p][static_cast<size_t>(d0) + i]);
      } else {
        cplx acc = 0.0;
        for (size_t p = 0; p < ports.size(); ++p) acc += c[p][static_cast<size_t>(d0) + i];
        s = std::norm(acc);
      }
      stat[i] = s;
      all_stats.push_back(s);
      if (s > best) {
        best = s;
        best_d = d0 + static_cast<long>(i);
        best_m = m;
        best_hyp_index = hi;
      }
    }
  }
  (void)best_hyp_index;

  // median-based noise floor (robust against the signal peak)
  std::nth_element(all_stats.begin(), all_stats.begin() + static_cast<long>(all_stats.size() / 2),
                   all_stats.end());
  const double med = all_stats[all_stats.size() / 2];
  const double noise = med / detail::combined_median_const(cfg.combining, cfg.n_ports);

  SearchResult res;
  res.peak_stat = best / std::max(noise, 1e-300);
  res.detected = cfg.threshold_gamma > 0.0 ? res.peak_stat > cfg.threshold_gamma : true;
  if (!res.detected) return res;

  const double fd_coarse = static_cast<double>(best_m) * fs / static_cast<double>(n);

  // parabolic lag refinement at the winning hypothesis (amplitude domain)
  std::vector<cplx> rot;
  double frac = 0.0;
  if (best_d > d0 && best_d < d1) {
    detail::rotate_replica(replica, fd_coarse, fs, rot);
    std::vector<double> amp(3, 0.0);
    for (int k = -1; k <= 1; ++k) {
      double s = 0.0;
      if (cfg.combining == Combining::NonCoherent) {
        for (size_t p = 0; p < ports.size(); ++p)
          s += std::norm(detail::dot_rotated(ports[p]->samples, best_d + k, rot));
      } else {
        cplx acc = 0.0;
        for (size_t p = 0; p < ports.size(); ++p)
          acc += detail::dot_rotated(ports[p]->samples, best_d + k, rot);
        s = std::norm(acc);
      }
      amp[static_cast<size_t>(k + 1)] = std::sqrt(s);
    }
    frac = detail::parabolic_offset(amp[0], amp[1], amp[2]);
  }
  res.delay_samples = static_cast<double>(best_d) + frac;

  // fine Doppler: direct correlations around the winning bin, parabolic peak
  const double span = std::max(grid.doppler_step_hz, fs / static_cast<double>(n));
  std::vector<std::pair<double, double>> fine;  // (fd, amplitude)
  for (double fd = fd_coarse - span; fd <= fd_coarse + span + 1e-9;
       fd += grid.fine_doppler_step_hz) {
    detail::rotate_replica(replica, fd, fs, rot);
    double s = 0.0;
    cplx acc = 0.0;
    for (size_t p = 0; p < ports.size(); ++p) {
      const cplx v = detail::dot_rotated(ports[p]->samples, best_d, rot);
      if (cfg.combining == Combining::NonCoherent)
        s += std::norm(v);
      else
        acc += v;
    }
    if (cfg.combining == Combining::Coherent) s = std::norm(acc);
    fine.emplace_back(fd, std::sqrt(s));
  }
  size_t ipk = 0;
  for (size_t i = 0; i < fine.size(); ++i)
    if (fine[i].second > fine[ipk].second) ipk = i;
  double fd_ref = fine[ipk].first;
  if (ipk > 0 && ipk + 1 < fine.size())
    fd_ref += detail::parabolic_offset(fine[ipk - 1].second, fine[ipk].second,
                                       fine[ipk + 1].second) *
              grid.fine_doppler_step_hz;
  res.doppler_hz = fd_ref;

  // In-band SNR estimate from the raw peak against the analytic pure-noise
  // correlation floor N^2*sigma^2*Er (the median floor is inflated by the
  // signal's own cross-Doppler sidelobes and would bias the estimate low).
  double er = 0.0;
  for (const auto& v : replica) er += std::norm(v);
  double pw = 0.0;
  for (const auto* p : ports)
    for (const auto& v : p->samples) pw += std::norm(v);
  pw /= static_cast<double>(ports.size() * lx);
  const double nn = static_cast<double>(n) * static_cast<double>(n);
  // per-port average signal peak power A^2|h|^2, then remove the signal's own
  // contribution from the input-power noise estimate
  double q = std::max(best - cfg.n_ports * noise, 1e-300) / (er * er * nn * cfg.n_ports);
  const double sigma2 = std::max(pw - q * cfg.n_ports * er / static_cast<double>(lx), 1e-12 * pw);
  res.snr_est_db = 10.0 * std::log10(std::max(q, 1e-300) * fs / (occupied_bw_hz * sigma2));
  return res;
}

/// Pfa-1 boundary and empirical-quantile threshold calibration: runs
/// noise-only searches through `max_stat_trial` (which must return the
/// noise-normalized max statistic of one full search) and returns the smallest
/// gamma with empirical exceedance probability <= pfa.
inline double calibrate_threshold(const std::function<double()>& max_stat_trial,
                                  const DetectionConfig& cfg, int n_trials) {
  cfg.validate();
  if (cfg.pfa >= 1.0) return 0.0;
  if (static_cast<double>(n_trials) < 10.0 / cfg.pfa)
    throw std::invalid_argument("calibrate_threshold: need at least 10/pfa noise trials");
  std::vector<double> maxima(static_cast<size_t>(n_trials));
  for (auto& m : maxima) m = max_stat_trial();
  const size_t k = static_cast<size_t>(std::floor(cfg.pfa * n_trials));  // allowed exceedances
  std::nth_element(maxima.begin(), maxima.end() - static_cast<long>(k) - 1, maxima.end());
  return maxima[maxima.size() - k - 1];
}

/// Approximate threshold for expensive grids: Gumbel moment fit on a smaller
/// number of noise-only maxima, extrapolated to the target pfa. Documented
/// trade: ~0.3 dB threshold uncertainty at 1000 trials.
inline double fit_threshold_gumbel(const std::function<double()>& max_stat_trial, int n_trials,
                                   double pfa) {
  if (n_trials < 100) throw std::invalid_argument("fit_threshold_gumbel: need >= 100 trials");
  if (pfa >= 1.0) return 0.0;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n_trials; ++i) {
    const double m = max_stat_trial();
    s1 += m;
    s2 += m * m;
  }
  const double mean = s1 / n_trials;
  const double var = std::max(s2 / n_trials - mean * mean, 1e-12);
  const double beta = std::sqrt(6.0 * var) / kPi;
  const double mu = mean - 0.5772156649015329 * beta;
  return mu - beta * std::log(-std::log(1.0 - pfa));
}

/// Convenience noise-only trial for calibration: fresh unit-variance noise
/// buffers searched with the given grid/replica.
inline std::function<double()> make_noise_trial(const std::vector<cplx>& replica,
                                                const SearchGrid& grid, DetectionConfig cfg,
                                                double fs, size_t buffer_len, double occupied_bw_hz,
                                                std::mt19937_64& rng) {
  cfg.threshold_gamma = 0.0;  // report the raw max statistic
  return [&rng, replica, grid, cfg, fs, buffer_len, occupied_bw_hz]() {
    std::vector<BasebandBuffer> bufs(static_cast<size_t>(cfg.n_ports));
    std::vector<const BasebandBuffer*> ptrs;
    for (auto& b : bufs) {
      b.sample_rate_hz = fs;
      b.samples.assign(buffer_len, cplx(0.0));
      add_awgn(b.samples, rng);
      ptrs.push_back(&b);
    }
    return correlate_search(ptrs, replica, grid, cfg, occupied_bw_hz).peak_stat;
  };
}

/// Narrow tracking search around a prior estimate: integer lags within +/-2
/// coarse bins, band-limited delay oversampling, fine Doppler around the
/// prior. Far cheaper than acquisition (tens of correlation cells vs the full
/// hypothesis grid). Falls back to detected=false (lost lock) when the peak
/// drops below the threshold.
inline SearchResult track(const std::vector<const BasebandBuffer*>& ports,
                          const std::vector<cplx>& replica, double prior_delay_samples,
                          double prior_doppler_hz, const SearchGrid& grid,
                          const DetectionConfig& cfg, double occupied_bw_hz) {
  cfg.validate();
  const double fs = ports.front()->sample_rate_hz;
  const long d_hat = std::lround(prior_delay_samples);
  const auto& interp = dsp::default_interpolator();
  const int halfspan = 2 + interp.taps() / 2 + 2;  // +/-2 search bins plus interpolator support

  // noise floor from the buffer power: var(corr) = mean|x|^2 * sum|r|^2
  double px = 0.0, er = 0.0;
  for (const auto* p : ports)
    for (const auto& v : p->samples) px += std::norm(v);
  px /= static_cast<double>(ports.size() * ports.front()->samples.size());
  for (const auto& v : replica) er += std::norm(v);
  const double noise = std::max(px * er, 1e-300) * cfg.n_ports;

  // integer-lag correlations around the prior, per Doppler candidate
  double best_stat = -1.0;
  double best_fd = prior_doppler_hz;
  std::vector<cplx> best_row;  // combined complex row only valid for 1 port / coherent
  std::vector<std::vector<cplx>> best_rows;
  const double fd_span = 2.0 * grid.fine_doppler_step_hz * 4.0;
  std::vector<cplx> rot;
  for (double fd = prior_doppler_hz - fd_span; fd <= prior_doppler_hz + fd_span + 1e-9;
       fd += grid.fine_doppler_step_hz) {
    detail::rotate_replica(replica, fd, fs, rot);
    std::vector<std::vector<cplx>> rows(ports.size(),
                                        std::vector<cplx>(static_cast<size_t>(2 * halfspan + 1)));
    for (size_t p = 0; p < ports.size(); ++p)
      for (int k = -halfspan; k <= halfspan; ++k)
        rows[p][static_cast<size_t>(k + halfspan)] =
            detail::dot_rotated(ports[p]->samples, d_hat + k, rot);
    const auto stat = combine_ports(rows, cfg.combining);
    for (int k = -2; k <= 2; ++k) {
      const double s = stat[static_cast<size_t>(k + halfspan)];
      if (s > best_stat) {
        best_stat = s;
        best_fd = fd;
        best_rows = rows;
      }
    }
  }

  SearchResult res;
  res.peak_stat = best_stat / noise;
  res.detected = cfg.threshold_gamma <= 0.0 || res.peak_stat > cfg.threshold_gamma;
  if (!res.detected) return res;

  // band-limited oversampled delay refinement: the correlation sequence is
  // band-limited to the replica bandwidth, so sinc interpolation between the
  // integer lags is exact up to the interpolator floor
  std::vector<std::vector<cplx>> rows = best_rows;
  const auto istat = [&](double pos) {
    double s = 0.0;
    cplx acc = 0.0;
    for (size_t p = 0; p < ports.size(); ++p) {
      const cplx v = interp.interp(rows[p], pos);
      if (cfg.combining == Combining::NonCoherent)
        s += std::norm(v);
      else
        acc += v;
    }
    return cfg.combining == Combining::Coherent ? std::norm(acc) : s;
  };
  const double step = 1.0 / static_cast<double>(grid.fine_delay_oversample);
  double best_pos = halfspan;
  double best_v = -1.0;
  for (double pos = halfspan - 2.0; pos <= halfspan + 2.0 + 1e-12; pos += step) {
    const double v = istat(pos);
    if (v > best_v) {
      best_v = v;
      best_pos = pos;
    }
  }
  const double vm = istat(best_pos - step), vp = istat(best_pos + step);
  best_pos += detail::parabolic_offset(std::sqrt(vm), std::sqrt(best_v), std::sqrt(vp)) * step;
  res.delay_samples = static_cast<double>(d_hat) + (best_pos - halfspan);
  res.doppler_hz = best_fd;
  // same peak-amplitude SNR estimate as the coarse search (direct-correlation
  // units carry no FFT scale factor)
  const size_t lx = ports.front()->samples.size();
  const double q = std::max(best_stat - noise, 1e-300) / (er * er * cfg.n_ports);
  const double sigma2 = std::max(px - q * cfg.n_ports * er / static_cast<double>(lx), 1e-12 * px);
  res.snr_est_db = 10.0 * std::log10(std::max(q, 1e-300) * fs / (occupied_bw_hz * sigma2));
  return res;
}

/// Per-satellite replicas resampled to the receiver rate, keyed by orbit id.
inline std::map<SatId, std::vector<cplx>> build_replicas(const NavMessage& nav, double rx_rate_hz) {
  std::map<SatId, std::vector<cplx>> out;
  for (const auto& e : nav.schedule.entries)
    out[e.sat_id] = resample_to_rate(make_prs_waveform(e.prs), rx_rate_hz);
  return out;
}

/// Blind acquisition of one scheduled satellite. The grid's delay bounds are
/// interpreted relative to the satellite's TDM slot start; the TOA is an
/// absolute receiver-clock arrival time.
inline Measurement acquire_one(const std::vector<const BasebandBuffer*>& ports,
                               const NavMessage& nav, const TdmEntry& entry,
                               const SearchGrid& grid, const DetectionConfig& cfg,
                               const std::vector<cplx>& replica) {
  const double fs = ports.front()->sample_rate_hz;
  const double epoch = ports.front()->epoch_s;
  // TDM slot offset within the measurement window; the buffer epoch marks the
  // window start of the occasion being processed
  const double slot_off = (nav.schedule.slot_start_s(entry) - nav.schedule.window_start_s) * fs;
  SearchGrid g = grid;
  g.delay_min_samples += slot_off;
  g.delay_max_samples += slot_off;
  if (g.delay_min_samples < 0.0 ||
      g.delay_max_samples >= static_cast<double>(ports.front()->samples.size()))
    throw std::invalid_argument("acquire: buffers do not span the measurement window");
  const double b_occ = entry.prs.n_subcarriers * entry.prs.scs_hz;
  const auto r = correlate_search(ports, replica, g, cfg, b_occ);
  Measurement m;
  m.sat_id = entry.sat_id;
  m.detected = r.detected;
  m.peak_stat = r.peak_stat;
  if (r.detected) {
    m.toa_s = epoch + r.delay_samples / fs;
    m.doppler_hz = r.doppler_hz;
    m.snr_est_db = r.snr_est_db;
  }
  return m;
}

/// Blind acquisition of all scheduled satellites in one measurement window.
inline std::vector<Measurement> acquire(const std::vector<const BasebandBuffer*>& ports,
                                        const NavMessage& nav, const SearchGrid& grid,
                                        const DetectionConfig& cfg,
                                        const std::map<SatId, std::vector<cplx>>& replicas) {
  nav.validate();
  std::vector<Measurement> out;
  for (const auto& e : nav.schedule.entries) {
    const auto it = replicas.find(e.sat_id);
    if (it == replicas.end())
      throw std::invalid_argument("acquire: replica missing for scheduled satellite");
    out.push_back(acquire_one(ports, nav, e, grid, cfg, it->second));
  }
  return out;
}

/// Multi-occasion search over a window: attempts acquisition for each
/// satellite on every occasion (tracking once locked); the occasion provider
/// returns the port buffers for occasion k. Latency per satellite is
/// (first-detection occasion + 1) * periodicity, or the window length with
/// detected=false when the window is exhausted.
struct OccasionOutcome {
  std::vector<Measurement> all;       // one entry per (satellite, occasion)
  std::map<SatId, double> latency_s;  // per-satellite TOA-acquisition latency
  std::map<SatId, bool> detected;
};

inline OccasionOutcome multi_occasion_search(
    const std::function<std::vector<BasebandBuffer>(int)>& occasion_provider,
    const NavMessage& nav, const SearchGrid& grid, const DetectionConfig& cfg,
    const std::map<SatId, std::vector<cplx>>& replicas, double search_window_s = 0.400,
    double carrier_hz = 2e9, const std::map<SatId, double>& assist_doppler_hz = {},
    double assist_halfspan_hz = 0.0) {
  const int n_occ =
      std::max(1, static_cast<int>(std::floor(search_window_s / nav.prs_periodicity_s + 1e-9)));
  OccasionOutcome out;
  struct Prior {
    Measurement m;
    double epoch_s = 0.0;
  };
  std::map<SatId, Prior> prior;
  for (const auto& e : nav.schedule.entries) {
    out.detected[e.sat_id] = false;
    out.latency_s[e.sat_id] = search_window_s;
  }
  for (int k = 0; k < n_occ; ++k) {
    const auto bufs = occasion_provider(k);
    std::vector<const BasebandBuffer*> ports;
    for (const auto& b : bufs) ports.push_back(&b);
    const double fs = ports.front()->sample_rate_hz;
    const double epoch = ports.front()->epoch_s;
    for (const auto& e : nav.schedule.entries) {
      Measurement m;
      m.sat_id = e.sat_id;
      m.occasion_index = k;
      const auto it = prior.find(e.sat_id);
      const double b_occ = e.prs.n_subcarriers * e.prs.scs_hz;
      if (it != prior.end()) {
        // locked: advect the previous TOA by the measured Doppler (delay rate
        // = -fd/fc) and track in a narrow window around the prediction
        const Measurement& pm = it->second.m;
        const double dt_occ = epoch - it->second.epoch_s;
        const double toa_pred = pm.toa_s + dt_occ * (1.0 - pm.doppler_hz / carrier_hz);
        const double prior_lag = (toa_pred - epoch) * fs;
        const auto r = track(ports, replicas.at(e.sat_id), prior_lag, pm.doppler_hz, grid,
                             cfg, b_occ);
        m.detected = r.detected;
        m.peak_stat = r.peak_stat;
        if (r.detected) {
          m.toa_s = epoch + r.delay_samples / fs;
          m.doppler_hz = r.doppler_hz;
          m.snr_est_db = r.snr_est_db;
        } else {
          prior.erase(it);  // lost lock: re-acquire next occasion
        }
      } else {
        // optional acquisition assistance: center the Doppler span on the
        // ephemeris prediction instead of searching the full blind grid
        SearchGrid g = grid;
        const auto ad = assist_doppler_hz.find(e.sat_id);
        if (ad != assist_doppler_hz.end() && assist_halfspan_hz > 0.0) {
          g.doppler_min_hz = ad->second - assist_halfspan_hz;
          g.doppler_max_hz = ad->second + assist_halfspan_hz;
        }
        m = acquire_one(ports, nav, e, g, cfg, replicas.at(e.sat_id));
        m.occasion_index = k;
      }
      m.latency_s = (k + 1) * nav.prs_periodicity_s;
      if (m.detected) {
        if (!out.detected[e.sat_id]) {
          out.detected[e.sat_id] = true;
          out.latency_s[e.sat_id] = (k + 1) * nav.prs_periodicity_s;
        }
        prior[e.sat_id] = {m, epoch};
      }
      out.all.push_back(m);
    }
  }
  return out;
}

}  // namespace ntnpos
