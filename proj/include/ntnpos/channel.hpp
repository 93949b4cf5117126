#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "ntnpos/constants.hpp"
#include "ntnpos/dsp/resample.hpp"
#include "ntnpos/linkbudget.hpp"
#include "ntnpos/prs.hpp"
#include "ntnpos/rng.hpp"

namespace ntnpos {

/// Fading / multipath configuration for one satellite-UE link. The direct tap
/// is Rician with the given K factor; an optional delayed echo tap (Rayleigh)
/// models residual delay spread. Taps are block-constant over one PRS occasion
/// and evolve across occasions as an AR(1) process.
struct ChannelConfig {
  double rician_k_db = 10.0;
  double occasion_corr = 0.9;     // AR(1) coefficient of the diffuse part across occasions
  double echo_power_db = -300.0;  // echo tap power relative to the direct tap; <= -100 disables
  double echo_delay_s = 0.0;
  double echo_corr = 0.0;         // correlation of the echo gain across receive ports

  bool echo_enabled() const { return echo_power_db > -100.0 && echo_delay_s > 0.0; }

  void validate() const {
    if (occasion_corr < 0.0 || occasion_corr >= 1.0)
      throw std::invalid_argument("channel: occasion_corr must be in [0,1)");
    if (echo_corr < 0.0 || echo_corr > 1.0)
      throw std::invalid_argument("channel: echo_corr must be in [0,1]");
    if (echo_enabled() && echo_delay_s < 0.0)
      throw std::invalid_argument("channel: echo delay must be non-negative");
  }
};

/// One resolvable propagation path: extra delay relative to the geometric
/// line-of-sight delay plus a complex gain.
struct ChannelTap {
  double extra_delay_s = 0.0;
  cplx gain = 1.0;
};

/// Per-link fading memory carried across PRS occasions.
struct FadingState {
  cplx direct_diffuse = 0.0;
  cplx echo_diffuse = 0.0;
  bool initialized = false;
};

inline cplx complex_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

/// Draw the tap set for one occasion and advance the AR(1) fading state.
inline std::vector<ChannelTap> draw_taps(const ChannelConfig& cfg, FadingState& state,
                                         std::mt19937_64& rng) {
  cfg.validate();
  const double k = std::pow(10.0, cfg.rician_k_db / 10.0);
  const double diffuse_var = 1.0 / (k + 1.0);
  const double los_amp = std::sqrt(k / (k + 1.0));
  const cplx w_d = complex_normal(rng);
  const cplx w_e = complex_normal(rng);
  if (!state.initialized) {
    state.direct_diffuse = w_d;
    state.echo_diffuse = w_e;
    state.initialized = true;
  } else {
    const double a = cfg.occasion_corr;
    const double b = std::sqrt(1.0 - a * a);
    state.direct_diffuse = a * state.direct_diffuse + b * w_d;
    state.echo_diffuse = a * state.echo_diffuse + b * w_e;
  }
  std::vector<ChannelTap> taps;
  taps.push_back({0.0, los_amp + std::sqrt(diffuse_var) * state.direct_diffuse});
  if (cfg.echo_enabled()) {
    // echo fading: unit-variance Rayleigh (cross-port correlation is applied
    // by the caller that owns the per-port draws)
    const double amp = std::pow(10.0, cfg.echo_power_db / 20.0);
    taps.push_back({cfg.echo_delay_s, amp * state.echo_diffuse});
  }
  return taps;
}

/// Propagate a transmit buffer through a time-varying delay channel onto an
/// output sample grid. For each output instant t the received sample is
///   sum_taps gain * x(t - tau(t) - extra) * exp(-j 2 pi fc (tau(t) + extra)),
/// i.e. fractional-delay resampling of the transmit waveform plus the carrier
/// phase rotation that carries the Doppler. The transmit buffer is treated as
/// zero outside its span.
inline BasebandBuffer apply_propagation(const BasebandBuffer& in,
                                        const std::function<double(double)>& delay_s,
                                        double carrier_hz, double out_rate_hz, double out_epoch_s,
                                        size_t out_len,
                                        const std::vector<ChannelTap>& taps = {{0.0, 1.0}}) {
  if (!(out_rate_hz > 0.0)) throw std::invalid_argument("apply_propagation: bad output rate");
  const auto& interp = dsp::default_interpolator();
  BasebandBuffer out;
  out.sample_rate_hz = out_rate_hz;
  out.epoch_s = out_epoch_s;
  out.samples.assign(out_len, cplx(0.0));
  for (size_t n = 0; n < out_len; ++n) {
    const double t = out_epoch_s + static_cast<double>(n) / out_rate_hz;
    const double tau = delay_s(t);
    cplx acc = 0.0;
    for (const auto& tap : taps) {
      const double total = tau + tap.extra_delay_s;
      const double pos = (t - total - in.epoch_s) * in.sample_rate_hz;
      const cplx x = interp.interp(in.samples.data(), in.samples.size(), pos);
      const double phase = -kTwoPi * carrier_hz * total;
      acc += tap.gain * x * std::polar(1.0, phase);
    }
    out.samples[n] = acc;
  }
  return out;
}

/// Delay-only propagation driven by a link profile: the output sample at
/// receiver time t equals the transmit waveform evaluated at t - delay(t),
/// band-limited interpolated and resampled to rx_rate. The output grid starts
/// at the transmit epoch and extends far enough to contain the delayed signal.
inline BasebandBuffer apply_time_varying_delay(const BasebandBuffer& tx, const LinkProfile& profile,
                                               double rx_rate_hz) {
  const double d_max = std::max(profile.delay_at(tx.epoch_s), profile.delay_at(tx.end_s()));
  const size_t out_len =
      static_cast<size_t>(std::ceil((tx.duration_s() + d_max) * rx_rate_hz)) + 64;
  return apply_propagation(
      tx, [&profile](double t) { return profile.delay_at(t); }, 0.0, rx_rate_hz, tx.epoch_s,
      out_len);
}

/// Multiply by exp(j 2 pi integral of fd dt) with trapezoidal integration
/// (standalone Doppler rotation used by tests and the receiver).
inline void apply_doppler(BasebandBuffer& buf, const std::function<double(double)>& fd_hz) {
  const double dt = 1.0 / buf.sample_rate_hz;
  double phase = 0.0;
  double fd_prev = fd_hz(buf.epoch_s);
  for (size_t n = 0; n < buf.samples.size(); ++n) {
    const double fd = fd_hz(buf.epoch_s + static_cast<double>(n) * dt);
    if (n > 0) phase += kPi * (fd + fd_prev) * dt;  // 2*pi * (fd+fd_prev)/2 * dt
    buf.samples[n] *= std::polar(1.0, phase);
    fd_prev = fd;
  }
}

/// Profile-driven overload of the Doppler rotation.
inline void apply_doppler(BasebandBuffer& buf, const LinkProfile& profile) {
  apply_doppler(buf, [&profile](double t) { return profile.doppler_at(t); });
}

/// Amplitude scale that realizes the requested in-band SNR against
/// unit-variance complex noise: SNR is defined in the occupied bandwidth, so
/// A^2 * fs / b_occ = snr for a unit-power signal.
inline double signal_scale_for_snr(double snr_db, double occupied_bw_hz, double sample_rate_hz) {
  if (!(occupied_bw_hz > 0.0) || !(sample_rate_hz > 0.0))
    throw std::invalid_argument("signal_scale_for_snr: bandwidths must be positive");
  const double snr = std::pow(10.0, snr_db / 10.0);
  return std::sqrt(snr * occupied_bw_hz / sample_rate_hz);
}

/// Add circularly-symmetric complex Gaussian noise of the given variance.
inline void add_awgn(std::vector<cplx>& x, std::mt19937_64& rng, double variance = 1.0) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5 * variance));
  for (auto& v : x) v += cplx(n(rng), n(rng));
}

/// Flat per-port fading + SNR scaling + AWGN: each receive port multiplies the
/// input by its own complex gain, scales to the target in-band SNR against
/// unit-variance noise, and (optionally) adds an independent noise stream.
inline std::vector<BasebandBuffer> apply_fading_and_noise(const BasebandBuffer& in,
                                                          const std::vector<cplx>& port_gains,
                                                          double snr_db, double occupied_bw_hz,
                                                          std::vector<std::mt19937_64>& port_rngs,
                                                          bool add_noise = true) {
  if (port_gains.empty() || port_gains.size() > 2)
    throw std::invalid_argument("apply_fading_and_noise: 1 or 2 ports");
  if (port_rngs.size() != port_gains.size())
    throw std::invalid_argument("apply_fading_and_noise: one rng per port");
  const double a = signal_scale_for_snr(snr_db, occupied_bw_hz, in.sample_rate_hz);
  std::vector<BasebandBuffer> out;
  for (size_t p = 0; p < port_gains.size(); ++p) {
    BasebandBuffer b = in;
    for (auto& v : b.samples) v *= a * port_gains[p];
    if (add_noise) add_awgn(b.samples, port_rngs[p]);
    out.push_back(std::move(b));
  }
  return out;
}

/// Sum multiple sample-rate-matched buffers onto a common output grid.
/// Sub-sample epoch misalignment is not allowed; generate the parts on the
/// output grid via apply_propagation instead.
inline BasebandBuffer superpose(const std::vector<BasebandBuffer>& parts, double rate_hz,
                                double epoch_s, size_t len) {
  BasebandBuffer out;
  out.sample_rate_hz = rate_hz;
  out.epoch_s = epoch_s;
  out.samples.assign(len, cplx(0.0));
  for (const auto& p : parts) {
    if (std::abs(p.sample_rate_hz - rate_hz) > 1e-6)
      throw std::invalid_argument("superpose: sample-rate mismatch");
    const double off = (p.epoch_s - epoch_s) * rate_hz;
    const long k0 = std::lround(off);
    if (std::abs(off - static_cast<double>(k0)) > 1e-6)
      throw std::invalid_argument("superpose: buffers not sample-aligned");
    for (size_t i = 0; i < p.samples.size(); ++i) {
      const long k = k0 + static_cast<long>(i);
      if (k >= 0 && k < static_cast<long>(len)) out.samples[static_cast<size_t>(k)] += p.samples[i];
    }
  }
  return out;
}

}  // namespace ntnpos
