#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ntnpos/posengine.hpp"
#include "ntnpos/scenario.hpp"

namespace ntnpos {

/// One emitted statistics table: either an empirical CDF (rows = sorted
/// (value, cdf) pairs, +inf sentinel values mark non-detections) or a Pd
/// curve (rows = (snr_db, pd)).
struct ResultTable {
  std::string metric;
  std::string x_unit;
  std::vector<std::pair<double, double>> rows;
  std::map<std::string, std::string> metadata;  // scenario hash etc.

  friend bool operator==(const ResultTable&, const ResultTable&) = default;

  void validate() const {
    if (metric.empty()) throw std::invalid_argument("result table: metric missing");
    if (!metadata.contains("scenario"))
      throw std::invalid_argument("result table: scenario hash metadata missing");
    double prev = -std::numeric_limits<double>::infinity();
    for (const auto& [x, y] : rows) {
      if (metric == "pd_vs_snr") {
        if (y < 0.0 || y > 1.0) throw std::invalid_argument("result table: pd outside [0,1]");
      } else {
        if (y < prev - 1e-12 || y < 0.0 || y > 1.0 + 1e-12)
          throw std::invalid_argument("result table: CDF not monotone in [0,1]");
        prev = y;
      }
    }
  }
};

inline ResultTable make_cdf_table(const std::string& metric, const std::string& x_unit,
                                  std::vector<double> samples, const std::string& hash) {
  ResultTable t;
  t.metric = metric;
  t.x_unit = x_unit;
  t.metadata["scenario"] = hash;
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  for (size_t i = 0; i < samples.size(); ++i)
    t.rows.emplace_back(samples[i], static_cast<double>(i + 1) / n);
  t.validate();
  return t;
}

/// Empirical quantile: smallest x with CDF >= p. +inf when the CDF plateaus
/// below p (non-detection mass).
inline double table_quantile(const ResultTable& t, double p) {
  if (t.rows.empty()) throw std::invalid_argument("table_quantile: empty table");
  for (const auto& [x, c] : t.rows)
    if (c >= p - 1e-12) return x;
  return std::numeric_limits<double>::infinity();
}

/// Relative improvement of run b over run a at a percentile: (p_a - p_b)/p_a.
inline double compare_runs(const ResultTable& a, const ResultTable& b, double percentile = 0.5) {
  if (a.metric != b.metric)
    throw std::invalid_argument("compare_runs: metric mismatch (" + a.metric + " vs " + b.metric +
                                ")");
  const double pa = table_quantile(a, percentile);
  const double pb = table_quantile(b, percentile);
  if (!(std::abs(pa) > 0.0)) return 0.0;
  return (pa - pb) / pa;
}

/// Write a table as plot-ready CSV. Values are printed with round-trip
/// precision; +inf sentinels (non-detections) keep the emitted CDF honest
/// about plateaus below 1 and are flagged in the last column.
inline void emit_cdf(const ResultTable& table, const std::string& path) {
  table.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_cdf: cannot open '" + path + "'");
  for (const auto& [k, v] : table.metadata) out << "# " << k << "=" << v << "\n";
  out << "metric,x_unit\n" << table.metric << "," << table.x_unit << "\n";
  out << "x,y,sentinel\n";
  char buf[64];
  for (const auto& [x, y] : table.rows) {
    if (std::isinf(x)) {
      std::snprintf(buf, sizeof(buf), "inf,%.17g,1\n", y);
    } else {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,0\n", x, y);
    }
    out << buf;
  }
  if (!out) throw std::runtime_error("emit_cdf: write failed for '" + path + "'");
}

/// Exact inverse of emit_cdf (round-trip oracle).
inline ResultTable read_cdf(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_cdf: cannot open '" + path + "'");
  ResultTable t;
  std::string line;
  int stage = 0;  // 0: header line, 1: metric values, 2: column line, 3: rows
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::runtime_error("read_cdf: bad metadata line");
      t.metadata[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    if (stage == 0) {
      if (line != "metric,x_unit") throw std::runtime_error("read_cdf: bad header");
      stage = 1;
    } else if (stage == 1) {
      const auto c = line.find(',');
      if (c == std::string::npos) throw std::runtime_error("read_cdf: bad metric line");
      t.metric = line.substr(0, c);
      t.x_unit = line.substr(c + 1);
      stage = 2;
    } else if (stage == 2) {
      if (line != "x,y,sentinel") throw std::runtime_error("read_cdf: bad column line");
      stage = 3;
    } else {
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos)
        throw std::runtime_error("read_cdf: bad row");
      const std::string xs = line.substr(0, c1);
      const double x =
          xs == "inf" ? std::numeric_limits<double>::infinity() : std::stod(xs);
      t.rows.emplace_back(x, std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
    }
  }
  if (stage < 3) throw std::runtime_error("read_cdf: truncated file");
  t.validate();
  return t;
}

namespace detail {

// Analytic constant-false-alarm threshold for the noise-normalized maximum
// statistic over n_eff effectively independent cells. Per-cell normalized
// noise statistic: Gamma(p,1) non-coherent, Exp(mean p) coherent.
inline double detection_threshold(const DetectionConfig& cfg, double n_eff_cells) {
  const double q = cfg.pfa / std::max(n_eff_cells, 1.0);  // per-cell exceedance target
  if (cfg.combining == Combining::Coherent) return -static_cast<double>(cfg.n_ports) * std::log(q);
  if (cfg.n_ports == 1) return -std::log(q);
  // p = 2: solve exp(-g) (1 + g) = q by Newton
  double g = -std::log(q) + std::log(1.0 - std::log(q));
  for (int it = 0; it < 50; ++it) {
    const double f = std::exp(-g) * (1.0 + g) - q;
    const double fp = -std::exp(-g) * g;
    const double step = f / fp;
    g -= step;
    if (std::abs(step) < 1e-12) break;
  }
  return g;
}

// Effective independent cell count of a search. Doppler hypotheses within one
// coherent-resolution bin (inverse replica duration) are fully correlated and
// count once. Delay lags are correlated over ~fs/bandwidth samples, but at the
// deep-tail thresholds used here their exceedances are still nearly
// independent (the union bound is tight in the tail), so every searched lag
// counts; the empirical false-alarm rate confirms this calibration.
inline double effective_cells(const SearchGrid& grid, double window_samples, double fs,
                              double occupied_bw_hz, double replica_dur_s) {
  (void)fs;
  (void)occupied_bw_hz;
  const double span = grid.doppler_max_hz - grid.doppler_min_hz;
  const double df = std::max(grid.doppler_step_hz, 1.0 / replica_dur_s);
  const double n_dopp = span / df + 1.0;
  const double n_delay = std::max(window_samples, 1.0);
  return n_dopp * n_delay;
}

// Emission-to-arrival flight time: the transmit instant is known, so iterate
// tau = |Rz(-w tau) s(t_tx) - ue| / c.
inline double forward_flight_time(const OrbitalElements& el, const Vec3& ue_pos, double t_tx) {
  const Vec3 s = propagate(el, t_tx).pos_ecef_m;
  double tau = (s - ue_pos).norm() / kSpeedOfLight;
  for (int it = 0; it < 4; ++it)
    tau = (rotate_z(s, -kEarthRotationRate * tau) - ue_pos).norm() / kSpeedOfLight;
  return tau;
}

// deterministic stream tags
inline constexpr uint64_t kTagUe = 101;
inline constexpr uint64_t kTagEpoch = 102;
inline constexpr uint64_t kTagNoise = 103;
inline constexpr uint64_t kTagFading = 104;
inline constexpr uint64_t kTagPd = 105;
inline constexpr uint64_t kTagVisibility = 106;

}  // namespace detail

/// Everything measured in one UE drop.
struct DropRecord {
  std::vector<double> toa_err_m;       // per scheduled satellite; +inf = never detected
  std::vector<double> toa_latency_s;   // per scheduled satellite; window cap when undetected
  double pos_err_m = std::numeric_limits<double>::infinity();         // full combining window
  double pos_err_single_m = std::numeric_limits<double>::infinity();  // first occasion only
  double pos_latency_s = 0.0;
};

/// One full physical-layer Monte-Carlo drop: sample UE + epoch, schedule,
/// synthesize the received streams, acquire/track, and position.
inline DropRecord run_one_drop(const Scenario& sc, int drop) {
  const double inf = std::numeric_limits<double>::infinity();
  DropRecord rec;
  const uint64_t seed = sc.master_seed;
  const auto du = static_cast<uint64_t>(drop);

  // --- UE position: uniform over the circular drop area ------------------
  auto rng_ue = make_rng(seed, detail::kTagUe, du);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double r = 0.5 * sc.area_diameter_m * std::sqrt(uni(rng_ue));
  const double th = kTwoPi * uni(rng_ue);
  const double north = r * std::sin(th), east = r * std::cos(th);
  const double ue_lat = sc.area_lat_rad + north / kEarthRadius;
  const double ue_lon = sc.area_lon_rad + east / (kEarthRadius * std::cos(sc.area_lat_rad));
  const UeLocation ue = make_ue(ue_lat, ue_lon);
  const UeLocation center = make_ue(sc.area_lat_rad, sc.area_lon_rad);

  // --- epoch + schedule (network side, area-center geometry) -------------
  const double a_orb = kEarthRadius + sc.constellation.altitude_m;
  const double t_orbit = kTwoPi * std::sqrt(a_orb * a_orb * a_orb / kEarthMu);
  auto rng_epoch = make_rng(seed, detail::kTagEpoch, du);
  const auto elements = build_constellation(sc.constellation);
  std::map<SatId, OrbitalElements> by_id;
  for (const auto& el : elements) by_id[el.sat_id] = el;

  double epoch = 0.0;
  std::vector<VisibilityRecord> vis;
  if (sc.pin_enabled) {
    // pinned single-satellite geometry: hunt for a pass at the requested
    // elevation (serving/non-serving TOA studies)
    double best_err = inf;
    for (int attempt = 0; attempt < 400 && best_err > deg2rad(0.5); ++attempt) {
      const double t = uni(rng_epoch) * t_orbit;
      for (const auto& el : elements) {
        const auto v = visibility(propagate(el, t), center, sc.min_elevation_rad);
        if (!v) continue;
        const double err = std::abs(v->elevation_rad - sc.pin_elevation_rad);
        if (err < best_err) {
          best_err = err;
          epoch = t;
          vis.assign(1, *v);
        }
      }
    }
    if (vis.empty()) throw std::runtime_error("run_one_drop: no pass at the pinned elevation");
  } else {
    epoch = uni(rng_epoch) * t_orbit;
    for (const auto& el : elements) {
      const auto v = visibility(propagate(el, epoch), center, sc.min_elevation_rad);
      if (v) vis.push_back(*v);
    }
    if (static_cast<int>(vis.size()) < 2)
      throw std::runtime_error("run_one_drop: fewer than two visible satellites");
  }

  NavMessage nav;
  nav.schedule = schedule_prs(vis, sc.pin_enabled ? 1 : sc.max_sats, sc.prs, epoch, sc.guard_slots);
  nav.prs_periodicity_s = sc.prs.periodicity_s;
  for (const auto& e : nav.schedule.entries) nav.ephemeris[e.sat_id] = by_id.at(e.sat_id);
  const size_t n_sats = nav.schedule.entries.size();
  const double fs = sc.rx_rate_hz();
  const double b_occ = sc.prs.n_subcarriers * sc.prs.scs_hz;
  const int n_occ = std::max(1, static_cast<int>(std::floor(sc.window_s / sc.prs.periodicity_s + 1e-9)));

  // --- per-satellite predictions at the area center (assistance data) ----
  std::map<SatId, double> tau_pred, fd_pred;
  double tau_lo = inf, tau_hi = -inf;
  for (const auto& e : nav.schedule.entries) {
    const double t0 = nav.schedule.slot_start_s(e);
    const double tau = light_time_delay(by_id.at(e.sat_id), center.pos_ecef_m, t0 + 3e-3);
    const double taup = light_time_delay(by_id.at(e.sat_id), center.pos_ecef_m, t0 + 3e-3 + 1e-2);
    tau_pred[e.sat_id] = tau;
    fd_pred[e.sat_id] = -sc.link.carrier_hz * (taup - tau) / 1e-2;
    tau_lo = std::min(tau_lo, tau);
    tau_hi = std::max(tau_hi, tau);
  }

  SearchGrid grid = sc.grid;
  grid.delay_min_samples = std::max(0.0, (tau_lo - sc.delay_margin_s) * fs);
  grid.delay_max_samples = (tau_hi + sc.delay_margin_s) * fs;

  DetectionConfig det = sc.detection;
  det.n_ports = sc.link.ue_rx_ports;
  {
    SearchGrid eff = grid;
    if (sc.assisted_doppler) {
      eff.doppler_min_hz = -sc.assist_halfspan_hz;
      eff.doppler_max_hz = sc.assist_halfspan_hz;
    }
    const double replica_dur = make_prs_config(sc.prs.bandwidth_hz, sc.prs.n_symbols).n_symbols *
                               (1.0 / sc.prs.scs_hz) * (1.0 + 160.0 / 2048.0);
    const double cells = detail::effective_cells(
        eff, grid.delay_max_samples - grid.delay_min_samples, fs, b_occ, replica_dur);
    det.threshold_gamma = detail::detection_threshold(det, cells);
  }

  // --- synthesis machinery ------------------------------------------------
  std::map<SatId, BasebandBuffer> tx_waves;
  for (const auto& e : nav.schedule.entries) tx_waves[e.sat_id] = make_prs_waveform(e.prs);
  const auto replicas = build_replicas(nav, fs);

  const double slot_len = nav.schedule.slot_len_s;
  const double win_len = nav.schedule.window_len_s;
  const size_t buf_len = static_cast<size_t>(
      std::ceil((win_len + tau_hi + sc.delay_margin_s + 2.0 * slot_len) * fs));

  // fading memory per (satellite, port); the echo tap is one static
  // reflection near the stationary receiver, so its gain holds over the short
  // measurement window: drawn once per satellite and drop. The antenna ports
  // sit a few wavelengths apart and see the reflection through slightly
  // different aspect angles, so their echo gains are correlated (echo_corr)
  // rather than identical.
  std::map<SatId, std::vector<FadingState>> fading;
  std::map<SatId, std::vector<std::mt19937_64>> fading_rng;
  std::map<SatId, std::vector<ChannelTap>> echo_taps;
  ChannelConfig direct_cfg = sc.channel;
  direct_cfg.echo_power_db = -300.0;  // per-port draws cover the direct tap only
  for (const auto& e : nav.schedule.entries) {
    fading[e.sat_id].resize(static_cast<size_t>(det.n_ports));
    // one stream per port so a one-port and a two-port run of the same seed
    // share identical first-port channels (paired comparisons)
    for (int p = 0; p < det.n_ports; ++p)
      fading_rng[e.sat_id].push_back(
          make_rng(seed, detail::kTagFading, du, cinit_for_sat(e.sat_id),
                   10 + static_cast<uint64_t>(p)));
    if (sc.channel.echo_enabled()) {
      auto& et = echo_taps[e.sat_id];
      const double rho = std::clamp(sc.channel.echo_corr, 0.0, 1.0);
      for (int p = 0; p < det.n_ports; ++p) {
        auto erng = make_rng(seed, detail::kTagFading, du, cinit_for_sat(e.sat_id),
                             1 + 20 * static_cast<uint64_t>(p));
        FadingState est;
        ChannelTap tap = draw_taps(sc.channel, est, erng)[1];
        if (p > 0)
          tap.gain = rho * et[0].gain + std::sqrt(1.0 - rho * rho) * tap.gain;
        et.push_back(tap);
      }
    }
  }

  const auto provider = [&](int k) {
    const double occ_start = epoch + k * sc.prs.periodicity_s;
    std::vector<BasebandBuffer> ports(static_cast<size_t>(det.n_ports));
    for (int p = 0; p < det.n_ports; ++p) {
      auto& b = ports[static_cast<size_t>(p)];
      b.sample_rate_hz = fs;
      b.epoch_s = occ_start;
      b.samples.assign(buf_len, cplx(0.0));
      auto rng_n = make_rng(seed, detail::kTagNoise, du, static_cast<uint64_t>(k),
                            static_cast<uint64_t>(p));
      add_awgn(b.samples, rng_n);
    }
    for (const auto& e : nav.schedule.entries) {
      const auto& el = by_id.at(e.sat_id);
      const double slot_start = occ_start + e.slot_index * slot_len;
      // positioning beam steered at the coverage-area center
      const Vec3 sat_pos = propagate(el, slot_start).pos_ecef_m;
      const BeamModel beam = make_positioning_beam((center.pos_ecef_m - sat_pos).normalized(),
                                                   sc.constellation.altitude_m);
      // link profile around this slot at the true UE
      const LinkProfile prof = make_link_profile(
          el, ue, sc.link, beam, slot_start + tau_pred.at(e.sat_id) - 2e-3,
          slot_start + tau_pred.at(e.sat_id) + 2.0 * slot_len + 2e-3, 1e-3);
      BasebandBuffer tx = tx_waves.at(e.sat_id);
      tx.epoch_s = slot_start;
      const double snr_db = prof.snr_at(slot_start + tau_pred.at(e.sat_id)) + sc.pin_snr_bonus_db;
      const double amp = signal_scale_for_snr(snr_db, b_occ, fs);
      // synthesize only the arrival neighborhood, aligned to the port grid
      const double margin_b = sc.delay_margin_s + 16.0 / fs;
      const double t0_raw = slot_start + tau_pred.at(e.sat_id) - margin_b;
      const double out_epoch =
          occ_start + std::round((t0_raw - occ_start) * fs) / fs;
      const size_t out_len =
          static_cast<size_t>(std::ceil((tx.duration_s() + 2.0 * margin_b) * fs));
      for (int p = 0; p < det.n_ports; ++p) {
        auto& frng = fading_rng.at(e.sat_id)[static_cast<size_t>(p)];
        auto taps = draw_taps(direct_cfg, fading.at(e.sat_id)[static_cast<size_t>(p)], frng);
        if (sc.channel.echo_enabled())
          taps.push_back(echo_taps.at(e.sat_id)[static_cast<size_t>(p)]);
        for (auto& tap : taps) tap.gain *= amp;
        const BasebandBuffer part =
            apply_propagation(tx, [&prof](double t) { return prof.delay_at(t); },
                              sc.link.carrier_hz, fs, out_epoch, out_len, taps);
        auto& b = ports[static_cast<size_t>(p)];
        const long k0 = std::lround((part.epoch_s - b.epoch_s) * fs);
        for (size_t i = 0; i < part.samples.size(); ++i) {
          const long idx = k0 + static_cast<long>(i);
          if (idx >= 0 && idx < static_cast<long>(buf_len))
            b.samples[static_cast<size_t>(idx)] += part.samples[i];
        }
      }
    }
    return ports;
  };

  const auto outcome = multi_occasion_search(
      provider, nav, grid, det, replicas, sc.window_s, sc.link.carrier_hz,
      sc.assisted_doppler ? fd_pred : std::map<SatId, double>{}, sc.assist_halfspan_hz);

  // --- TOA metrics --------------------------------------------------------
  for (const auto& e : nav.schedule.entries) {
    rec.toa_latency_s.push_back(outcome.latency_s.at(e.sat_id));
    double err = inf;
    for (const auto& m : outcome.all) {
      if (!(m.sat_id == e.sat_id) || !m.detected) continue;
      const double slot_start =
          epoch + m.occasion_index * sc.prs.periodicity_s + e.slot_index * slot_len;
      const double tau_true = detail::forward_flight_time(by_id.at(e.sat_id), ue.pos_ecef_m,
                                                          slot_start);
      err = std::abs(m.toa_s - (slot_start + tau_true)) * kSpeedOfLight;
      break;  // first detection only
    }
    rec.toa_err_m.push_back(err);
  }

  // --- positioning --------------------------------------------------------
  if (n_sats >= 2) {
    CombiningWindow win;
    win.window_s = sc.window_s;
    win.surface_constraint = sc.surface_constraint;
    std::map<int, std::vector<Measurement>> by_occ;
    for (const auto& m : outcome.all) by_occ[m.occasion_index].push_back(m);
    for (int k = 0; k < n_occ; ++k) {
      const double occ_start = epoch + k * sc.prs.periodicity_s;
      std::optional<TdoaSet> set;
      const auto it = by_occ.find(k);
      if (it != by_occ.end()) set = form_tdoa(it->second, nav, occ_start);
      try {
        const auto est = combine_window(win, set, occ_start, center.pos_ecef_m);
        if (est && est->converged) {
          const double err = (est->pos_ecef_m - ue.pos_ecef_m).norm();
          if (k == 0) rec.pos_err_single_m = err;
          rec.pos_err_m = err;
        }
      } catch (const std::runtime_error&) {
        // singular occasion geometry: no update this occasion
      }
    }
    rec.pos_latency_s = positioning_latency(outcome.all, sc.prs.periodicity_s, sc.window_s);
  } else {
    rec.pos_latency_s = sc.window_s;
  }
  return rec;
}

/// Pd-vs-SNR sweep in AWGN at pinned SNR: replica injections at random
/// delay/Doppler inside the search grid, equal (phase-aligned) port gains,
/// independent noise per port.
inline ResultTable run_pd_sweep(const Scenario& sc) {
  const double fs = sc.rx_rate_hz();
  const double b_occ = sc.prs.n_subcarriers * sc.prs.scs_hz;
  PrsConfig prs = sc.prs;
  prs.seed_cinit = 611;
  const auto replica = resample_to_rate(make_prs_waveform(prs), fs);
  const size_t buf_len = dsp::Fft::next_pow2(replica.size() + 2048);
  SearchGrid grid = sc.grid;
  grid.delay_min_samples = 0.0;
  grid.delay_max_samples = static_cast<double>(buf_len - replica.size() - 1);

  DetectionConfig det = sc.detection;
  det.n_ports = sc.link.ue_rx_ports;
  const double replica_dur = static_cast<double>(replica.size()) / fs;
  const double cells = detail::effective_cells(
      grid, grid.delay_max_samples - grid.delay_min_samples, fs, b_occ, replica_dur);
  det.threshold_gamma = detail::detection_threshold(det, cells);

  ResultTable t;
  t.metric = "pd_vs_snr";
  t.x_unit = "dB";
  t.metadata["scenario"] = scenario_hash(sc);
  for (double snr = sc.pd_snr_min_db; snr <= sc.pd_snr_max_db + 1e-9; snr += sc.pd_snr_step_db) {
    int hits = 0;
    for (int trial = 0; trial < sc.pd_trials; ++trial) {
      auto rng = make_rng(sc.master_seed, detail::kTagPd,
                          static_cast<uint64_t>(std::llround(snr * 1000.0)) + (1ULL << 32),
                          static_cast<uint64_t>(trial));
      std::uniform_real_distribution<double> uni(0.0, 1.0);
      const size_t lag = static_cast<size_t>(uni(rng) * (grid.delay_max_samples - 1.0));
      const double fd =
          grid.doppler_min_hz + uni(rng) * (grid.doppler_max_hz - grid.doppler_min_hz);
      const double phi = kTwoPi * uni(rng);
      const double a = signal_scale_for_snr(snr, b_occ, fs);
      std::vector<BasebandBuffer> bufs(static_cast<size_t>(det.n_ports));
      std::vector<const BasebandBuffer*> ports;
      for (auto& b : bufs) {
        b.sample_rate_hz = fs;
        b.samples.assign(buf_len, cplx(0.0));
        for (size_t i = 0; i < replica.size(); ++i)
          b.samples[lag + i] = a * replica[i] *
                               std::polar(1.0, phi + kTwoPi * fd * static_cast<double>(i) / fs);
        add_awgn(b.samples, rng);
        ports.push_back(&b);
      }
      if (correlate_search(ports, replica, grid, det, b_occ).detected) ++hits;
    }
    t.rows.emplace_back(snr, static_cast<double>(hits) / sc.pd_trials);
  }
  t.validate();
  return t;
}

/// Visible-count CDF over the drop area (rows: (count, cdf)).
inline ResultTable run_visibility(const Scenario& sc) {
  auto rng = make_rng(sc.master_seed, detail::kTagVisibility, 0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double a_orb = kEarthRadius + sc.constellation.altitude_m;
  const double t_orbit = kTwoPi * std::sqrt(a_orb * a_orb * a_orb / kEarthMu);
  std::vector<UeLocation> ues;
  std::vector<double> epochs;
  const int n_pos = std::min(sc.drops, 50);
  for (int i = 0; i < n_pos; ++i) {
    const double r = 0.5 * sc.area_diameter_m * std::sqrt(uni(rng));
    const double th = kTwoPi * uni(rng);
    ues.push_back(make_ue(sc.area_lat_rad + r * std::sin(th) / kEarthRadius,
                          sc.area_lon_rad +
                              r * std::cos(th) / (kEarthRadius * std::cos(sc.area_lat_rad))));
  }
  const int n_epochs = std::max(sc.drops / n_pos, 1);
  for (int i = 0; i < n_epochs; ++i) epochs.push_back(uni(rng) * t_orbit);
  const auto tables =
      visible_count_cdf(sc.constellation, ues, {sc.min_elevation_rad}, epochs);
  ResultTable t;
  t.metric = "visible_count";
  t.x_unit = "count";
  t.metadata["scenario"] = scenario_hash(sc);
  for (size_t k = 0; k < tables[0].cdf.size(); ++k)
    t.rows.emplace_back(static_cast<double>(k), tables[0].cdf[k]);
  t.validate();
  return t;
}

/// Run the scenario's Monte-Carlo drops (optionally on several worker
/// threads; per-drop seeding keeps results identical for any worker count)
/// and assemble the requested tables.
inline std::vector<ResultTable> run_scenario(const Scenario& sc,
                                             const std::vector<std::string>& metrics,
                                             int workers = 1) {
  sc.validate();
  static const std::vector<std::string> known = {"toa_error", "toa_latency",   "pos_error",
                                                 "pos_latency", "visible_count", "pd_vs_snr",
                                                 "pos_error_single"};
  for (const auto& m : metrics)
    if (std::find(known.begin(), known.end(), m) == known.end())
      throw std::invalid_argument("run_scenario: unknown metric '" + m + "'");

  const bool needs_drops =
      std::any_of(metrics.begin(), metrics.end(), [](const std::string& m) {
        return m != "visible_count" && m != "pd_vs_snr";
      });

  std::vector<DropRecord> recs;
  if (needs_drops) {
    recs.resize(static_cast<size_t>(sc.drops));
    std::atomic<int> next{0};
    const int nw = std::max(1, workers);
    auto work = [&]() {
      for (;;) {
        const int d = next.fetch_add(1);
        if (d >= sc.drops) return;
        recs[static_cast<size_t>(d)] = run_one_drop(sc, d);
      }
    };
    if (nw == 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (int i = 0; i < nw; ++i) pool.emplace_back(work);
      for (auto& th : pool) th.join();
    }
  }

  const std::string hash = scenario_hash(sc);
  std::vector<ResultTable> out;
  for (const auto& m : metrics) {
    if (m == "visible_count") {
      out.push_back(run_visibility(sc));
    } else if (m == "pd_vs_snr") {
      out.push_back(run_pd_sweep(sc));
    } else {
      std::vector<double> samples;
      for (const auto& r : recs) {
        if (m == "toa_error")
          samples.insert(samples.end(), r.toa_err_m.begin(), r.toa_err_m.end());
        else if (m == "toa_latency")
          samples.insert(samples.end(), r.toa_latency_s.begin(), r.toa_latency_s.end());
        else if (m == "pos_error")
          samples.push_back(r.pos_err_m);
        else if (m == "pos_error_single")
          samples.push_back(r.pos_err_single_m);
        else
          samples.push_back(r.pos_latency_s);
      }
      const std::string unit = (m == "toa_latency" || m == "pos_latency") ? "s" : "m";
      out.push_back(make_cdf_table(m, unit, std::move(samples), hash));
    }
  }
  return out;
}

}  // namespace ntnpos
