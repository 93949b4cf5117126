#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "ntnpos/constellation.hpp"
#include "ntnpos/dsp/fft.hpp"
#include "ntnpos/rng.hpp"

namespace ntnpos {

using dsp::cplx;

/// Complex sample stream with its sampling rate and the absolute time of the
/// first sample.
struct BasebandBuffer {
  std::vector<cplx> samples;
  double sample_rate_hz = 0.0;
  double epoch_s = 0.0;

  double duration_s() const { return samples.size() / sample_rate_hz; }
  double end_s() const { return epoch_s + duration_s(); }
};

struct PrsConfig {
  uint32_t seed_cinit = 0;
  double scs_hz = 15e3;
  double bandwidth_hz = 1e6;
  int n_subcarriers = 60;   // 60 for 1 MHz, 300 for 5 MHz
  int n_symbols = 1;        // 1 or 14
  double periodicity_s = 0.040;
  int slot_offset = 0;      // slot index within the TDM pattern
  double tx_sample_rate_hz = 1024 * 15e3;

  int fft_size() const { return static_cast<int>(std::lround(tx_sample_rate_hz / scs_hz)); }

  void validate() const {
    if (seed_cinit >= (1u << 31)) throw std::invalid_argument("prs: cinit must be < 2^31");
    if (n_subcarriers * scs_hz > bandwidth_hz + 1e-6)
      throw std::invalid_argument("prs: occupied subcarriers exceed bandwidth");
    if (n_symbols < 1 || n_symbols > 14) throw std::invalid_argument("prs: n_symbols in [1,14]");
    const double slots = periodicity_s / 1e-3;
    if (std::abs(slots - std::lround(slots)) > 1e-9)
      throw std::invalid_argument("prs: periodicity must be a multiple of 1 ms");
    const int n = fft_size();
    if (n < n_subcarriers + 1 || (n & (n - 1)) != 0)
      throw std::invalid_argument("prs: tx rate must give a power-of-two FFT covering the subcarriers");
  }
};

/// Default PRS numerology for the two evaluated bandwidths.
inline PrsConfig make_prs_config(double bandwidth_hz, int n_symbols = 1) {
  PrsConfig cfg;
  cfg.bandwidth_hz = bandwidth_hz;
  cfg.n_symbols = n_symbols;
  if (bandwidth_hz > 2e6) {
    cfg.n_subcarriers = 300;
    cfg.tx_sample_rate_hz = 4096 * 15e3;
  } else {
    cfg.n_subcarriers = 60;
    cfg.tx_sample_rate_hz = 1024 * 15e3;
  }
  return cfg;
}

/// Length-31 Gold sequence (x1/x2 LFSR pair with the standard 1600-sample
/// advance). cinit seeds the x2 register.
inline std::vector<uint8_t> gold_sequence(uint32_t cinit, size_t length) {
  if (length < 1) throw std::invalid_argument("gold: length must be >= 1");
  if (cinit >= (1u << 31)) throw std::invalid_argument("gold: cinit must be < 2^31");
  constexpr size_t kNc = 1600;
  const size_t n = length + kNc + 31;
  std::vector<uint8_t> x1(n), x2(n);
  x1[0] = 1;
  for (int i = 0; i < 31; ++i) x2[static_cast<size_t>(i)] = (cinit >> i) & 1u;
  for (size_t i = 0; i + 31 < n; ++i) {
    x1[i + 31] = static_cast<uint8_t>((x1[i + 3] + x1[i]) & 1u);
    x2[i + 31] = static_cast<uint8_t>((x2[i + 3] + x2[i + 2] + x2[i + 1] + x2[i]) & 1u);
  }
  std::vector<uint8_t> c(length);
  for (size_t i = 0; i < length; ++i) c[i] = static_cast<uint8_t>((x1[i + kNc] + x2[i + kNc]) & 1u);
  return c;
}

/// QPSK mapping of a bit pair stream onto the occupied subcarriers of one
/// OFDM symbol: (1/sqrt(2)) * ((1-2c(2m)) + j(1-2c(2m+1))).
inline std::vector<cplx> map_prs_symbol(const std::vector<uint8_t>& bits, size_t offset,
                                        int n_subcarriers) {
  if (bits.size() < offset + 2 * static_cast<size_t>(n_subcarriers))
    throw std::invalid_argument("map_prs_symbol: insufficient bits");
  std::vector<cplx> out(static_cast<size_t>(n_subcarriers));
  const double s = 1.0 / std::sqrt(2.0);
  for (int m = 0; m < n_subcarriers; ++m) {
    const double re = 1.0 - 2.0 * bits[offset + 2 * static_cast<size_t>(m)];
    const double im = 1.0 - 2.0 * bits[offset + 2 * static_cast<size_t>(m) + 1];
    out[static_cast<size_t>(m)] = cplx(s * re, s * im);
  }
  return out;
}

/// Subcarrier index (DC excluded, symmetric around DC) for the m-th occupied
/// position, m in [0, n_subcarriers).
inline int subcarrier_index(int m, int n_subcarriers) {
  const int half = n_subcarriers / 2;
  return m < half ? m - half : m - half + 1;
}

inline int cp_length(int fft_size, int symbol_in_slot) {
  // normal CP, 15 kHz numerology: long CP on the first symbol of each half-slot
  const bool long_cp = (symbol_in_slot % 7) == 0;
  return (long_cp ? 160 : 144) * fft_size / 2048;
}

/// OFDM modulation of a per-symbol subcarrier grid into a baseband buffer at
/// the transmit sampling rate. Symbols are laid out contiguously from the
/// slot start with normal cyclic prefixes; the output is normalized to unit
/// average power.
inline BasebandBuffer ofdm_modulate(const std::vector<std::vector<cplx>>& grid,
                                    const PrsConfig& cfg) {
  cfg.validate();
  if (grid.size() != static_cast<size_t>(cfg.n_symbols))
    throw std::invalid_argument("ofdm_modulate: grid/config symbol count mismatch");
  const int n = cfg.fft_size();
  BasebandBuffer buf;
  buf.sample_rate_hz = cfg.tx_sample_rate_hz;
  buf.epoch_s = 0.0;
  std::vector<cplx> sym(static_cast<size_t>(n));
  for (int s = 0; s < cfg.n_symbols; ++s) {
    if (grid[static_cast<size_t>(s)].size() != static_cast<size_t>(cfg.n_subcarriers))
      throw std::invalid_argument("ofdm_modulate: grid row size mismatch");
    std::fill(sym.begin(), sym.end(), cplx(0.0));
    for (int m = 0; m < cfg.n_subcarriers; ++m) {
      const int k = subcarrier_index(m, cfg.n_subcarriers);
      sym[static_cast<size_t>((k + n) % n)] = grid[static_cast<size_t>(s)][static_cast<size_t>(m)];
    }
    dsp::Fft::inverse(sym);
    const int cp = cp_length(n, s);
    for (int i = 0; i < cp; ++i) buf.samples.push_back(sym[static_cast<size_t>(n - cp + i)]);
    for (int i = 0; i < n; ++i) buf.samples.push_back(sym[static_cast<size_t>(i)]);
  }
  double p = 0.0;
  for (const auto& x : buf.samples) p += std::norm(x);
  p /= static_cast<double>(buf.samples.size());
  const double scale = 1.0 / std::sqrt(p);
  for (auto& x : buf.samples) x *= scale;
  return buf;
}

/// CP strip + forward DFT, inverse of ofdm_modulate up to the power
/// normalization (test oracle / receiver-side utility).
inline std::vector<std::vector<cplx>> ofdm_demodulate(const BasebandBuffer& buf,
                                                      const PrsConfig& cfg) {
  const int n = cfg.fft_size();
  std::vector<std::vector<cplx>> grid;
  size_t pos = 0;
  for (int s = 0; s < cfg.n_symbols; ++s) {
    pos += static_cast<size_t>(cp_length(n, s));
    if (pos + static_cast<size_t>(n) > buf.samples.size())
      throw std::invalid_argument("ofdm_demodulate: buffer too short");
    std::vector<cplx> sym(buf.samples.begin() + static_cast<long>(pos),
                          buf.samples.begin() + static_cast<long>(pos) + n);
    dsp::Fft::forward(sym);
    std::vector<cplx> row(static_cast<size_t>(cfg.n_subcarriers));
    for (int m = 0; m < cfg.n_subcarriers; ++m) {
      const int k = subcarrier_index(m, cfg.n_subcarriers);
      row[static_cast<size_t>(m)] = sym[static_cast<size_t>((k + n) % n)];
    }
    grid.push_back(std::move(row));
    pos += static_cast<size_t>(n);
  }
  return grid;
}

/// Full PRS slot waveform for one satellite: a continuous Gold segment split
/// across the configured number of symbols.
inline BasebandBuffer make_prs_waveform(const PrsConfig& cfg) {
  cfg.validate();
  const size_t bits_per_symbol = 2 * static_cast<size_t>(cfg.n_subcarriers);
  const auto bits = gold_sequence(cfg.seed_cinit, bits_per_symbol * static_cast<size_t>(cfg.n_symbols));
  std::vector<std::vector<cplx>> grid;
  for (int s = 0; s < cfg.n_symbols; ++s)
    grid.push_back(map_prs_symbol(bits, bits_per_symbol * static_cast<size_t>(s), cfg.n_subcarriers));
  return ofdm_modulate(grid, cfg);
}

/// Deterministic per-satellite sequence seed (31-bit hash of the orbit identity).
inline uint32_t cinit_for_sat(const SatId& id) {
  const uint64_t h = splitmix64((static_cast<uint64_t>(static_cast<uint32_t>(id.plane)) << 32) |
                                static_cast<uint32_t>(id.index));
  return static_cast<uint32_t>(h & 0x7fffffffu);
}

struct TdmEntry {
  SatId sat_id;
  int slot_index = 0;
  PrsConfig prs;
};

struct TdmSchedule {
  double window_start_s = 0.0;
  double window_len_s = 0.0;
  double slot_len_s = 1e-3;
  int guard_slots = 1;
  std::vector<TdmEntry> entries;

  double slot_start_s(const TdmEntry& e) const {
    return window_start_s + e.slot_index * slot_len_s;
  }
};

/// Select up to max_sats satellites (highest elevation first, sat id as the
/// tie-break) and assign TDM slots separated by guard gaps.
inline TdmSchedule schedule_prs(std::vector<VisibilityRecord> visible, int max_sats,
                                const PrsConfig& prs_defaults, double window_start_s = 0.0,
                                int guard_slots = 1) {
  if (visible.empty()) throw std::invalid_argument("schedule_prs: no visible satellites");
  std::sort(visible.begin(), visible.end(), [](const auto& a, const auto& b) {
    if (a.elevation_rad != b.elevation_rad) return a.elevation_rad > b.elevation_rad;
    return a.sat_id < b.sat_id;
  });
  const int n = std::min<int>(max_sats, static_cast<int>(visible.size()));
  TdmSchedule sched;
  sched.window_start_s = window_start_s;
  sched.guard_slots = guard_slots;
  for (int i = 0; i < n; ++i) {
    TdmEntry e;
    e.sat_id = visible[static_cast<size_t>(i)].sat_id;
    e.slot_index = i * (1 + guard_slots);
    e.prs = prs_defaults;
    e.prs.seed_cinit = cinit_for_sat(e.sat_id);
    e.prs.slot_offset = e.slot_index;
    sched.entries.push_back(e);
  }
  sched.window_len_s = (n * (1 + guard_slots) - guard_slots) * sched.slot_len_s;
  return sched;
}

/// Navigation message: ephemeris snapshot plus PRS configuration and the TDM
/// schedule, delivered to the UE out of band.
struct NavMessage {
  std::map<SatId, OrbitalElements> ephemeris;
  TdmSchedule schedule;
  double prs_periodicity_s = 0.040;

  void validate() const {
    for (const auto& e : schedule.entries)
      if (!ephemeris.contains(e.sat_id))
        throw std::invalid_argument("nav message: scheduled satellite missing ephemeris");
  }
};

}  // namespace ntnpos
