#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ntnpos/channel.hpp"
#include "ntnpos/constellation.hpp"
#include "ntnpos/linkbudget.hpp"
#include "ntnpos/prs.hpp"
#include "ntnpos/receiver.hpp"

namespace ntnpos {

/// Full simulation scenario: every physical and algorithmic parameter of one
/// Monte-Carlo campaign, readable from a key/section text file. Defaults are
/// the nominal evaluation setup (600 km / 840-satellite constellation, 2 GHz
/// carrier, 34 dBW/MHz, 40 ms PRS periodicity, 50 km drop area).
struct Scenario {
  ConstellationSpec constellation;
  LinkParams link;
  PrsConfig prs = make_prs_config(1e6, 1);
  ChannelConfig channel;
  SearchGrid grid;
  DetectionConfig detection;

  // scheduling policy
  int max_sats = 4;
  double min_elevation_rad = deg2rad(15.0);
  int guard_slots = 1;

  // receiver front end / search policy
  double rx_sample_rate_hz = 0.0;  // 0 -> derived from the PRS bandwidth
  bool assisted_doppler = false;   // center the Doppler search on the
                                   // ephemeris prediction at the area center
  double assist_halfspan_hz = 2e3;
  double delay_margin_s = 120e-6;  // delay-window margin around the predicted
                                   // arrival (UE position unknown within area)

  // positioning engine
  double window_s = 0.400;  // search + measurement-combining window
  bool surface_constraint = true;

  // Monte-Carlo campaign
  int drops = 200;
  double area_lat_rad = 0.0;
  double area_lon_rad = 0.0;
  double area_diameter_m = 50e3;
  uint64_t master_seed = 1;

  // Pd-vs-SNR sweep (AWGN, pinned SNR)
  double pd_snr_min_db = -2.0;
  double pd_snr_max_db = 14.0;
  double pd_snr_step_db = 1.0;
  int pd_trials = 100;

  // Optional pinned single-satellite geometry (serving/non-serving TOA
  // studies): pick a real constellation pass at the given elevation and add
  // the serving-beam bonus on top of the link budget.
  bool pin_enabled = false;
  double pin_elevation_rad = 0.0;
  double pin_snr_bonus_db = 0.0;

  double rx_rate_hz() const {
    if (rx_sample_rate_hz > 0.0) return rx_sample_rate_hz;
    return prs.bandwidth_hz > 2e6 ? 53.76e6 : 10.56e6;
  }

  void validate() const {
    constellation.validate();
    link.validate();
    prs.validate();
    channel.validate();
    grid.validate();
    detection.validate();
    if (max_sats < 1) throw std::invalid_argument("scenario: [schedule] max_sats: must be >= 1");
    if (guard_slots < 0)
      throw std::invalid_argument("scenario: [schedule] guard_slots: must be >= 0");
    if (!(min_elevation_rad >= 0.0))
      throw std::invalid_argument("scenario: [schedule] min_elevation_deg: must be >= 0");
    if (drops < 1) throw std::invalid_argument("scenario: [drops] count: must be >= 1");
    if (!(area_diameter_m > 0.0))
      throw std::invalid_argument("scenario: [drops] area_diameter_km: must be positive");
    if (!(window_s >= prs.periodicity_s))
      throw std::invalid_argument("scenario: [engine] window_s: must cover >= 1 PRS occasion");
    if (!(assist_halfspan_hz > 0.0))
      throw std::invalid_argument("scenario: [receiver] assist_halfspan_hz: must be positive");
    if (!(delay_margin_s > 0.0))
      throw std::invalid_argument("scenario: [receiver] delay_margin_us: must be positive");
    if (!(pd_snr_step_db > 0.0) || pd_snr_max_db < pd_snr_min_db)
      throw std::invalid_argument("scenario: [pd_sweep] snr range: empty or bad step");
    if (pd_trials < 1) throw std::invalid_argument("scenario: [pd_sweep] trials: must be >= 1");
    if (detection.n_ports != link.ue_rx_ports)
      throw std::invalid_argument("scenario: [link] ue_rx_ports: must match receiver port count");
    if (pin_enabled && !(pin_elevation_rad > 0.0))
      throw std::invalid_argument("scenario: [pin] elevation_deg: must be positive");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& where, const std::string& v) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw std::invalid_argument("scenario: " + where + ": not a number: '" + v + "'");
  }
}

inline long long parse_int(const std::string& where, const std::string& v) {
  try {
    size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw std::invalid_argument("scenario: " + where + ": not an integer: '" + v + "'");
  }
}

inline bool parse_bool(const std::string& where, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("scenario: " + where + ": not a boolean: '" + v + "'");
}

}  // namespace detail

/// Parse a key/section scenario description:
///   [section]
///   key = value        # comment
/// Unknown sections or keys are field-level errors. The returned scenario has
/// been validated.
inline Scenario parse_scenario(std::istream& in) {
  Scenario sc;
  using Setter = std::function<void(const std::string& where, const std::string& value)>;
  const auto d = [](double& f) {
    return [&f](const std::string& w, const std::string& v) { f = detail::parse_double(w, v); };
  };
  const auto deg = [](double& f) {
    return [&f](const std::string& w, const std::string& v) {
      f = deg2rad(detail::parse_double(w, v));
    };
  };
  const auto i = [](int& f) {
    return [&f](const std::string& w, const std::string& v) {
      f = static_cast<int>(detail::parse_int(w, v));
    };
  };
  const auto b = [](bool& f) {
    return [&f](const std::string& w, const std::string& v) { f = detail::parse_bool(w, v); };
  };

  std::map<std::string, Setter> keys = {
      {"constellation.altitude_m",
       [&sc](const std::string& w, const std::string& v) {
         sc.constellation.altitude_m = detail::parse_double(w, v);
       }},
      {"constellation.inclination_deg", deg(sc.constellation.inclination_rad)},
      {"constellation.num_planes", i(sc.constellation.num_planes)},
      {"constellation.sats_per_plane", i(sc.constellation.sats_per_plane)},

      {"link.carrier_hz", d(sc.link.carrier_hz)},
      {"link.eirp_density_dbw_per_mhz", d(sc.link.eirp_density_dbw_per_mhz)},
      {"link.noise_figure_db", d(sc.link.noise_figure_db)},
      {"link.antenna_temp_k", d(sc.link.antenna_temp_k)},
      {"link.ue_rx_ports", i(sc.link.ue_rx_ports)},
      {"link.atmos_margin_db", d(sc.link.atmos_margin_db)},
      {"link.excess_loss_knee_deg", deg(sc.link.excess_loss_knee_rad)},
      {"link.excess_loss_max_db", d(sc.link.excess_loss_max_db)},
      {"link.snr_offset_db", d(sc.link.snr_offset_db)},

      {"prs.bandwidth_hz",
       [&sc](const std::string& w, const std::string& v) {
         // re-derive numerology for the new bandwidth, keep explicit settings
         const int nsym = sc.prs.n_symbols;
         const double per = sc.prs.periodicity_s;
         sc.prs = make_prs_config(detail::parse_double(w, v), nsym);
         sc.prs.periodicity_s = per;
       }},
      {"prs.n_symbols", i(sc.prs.n_symbols)},
      {"prs.periodicity_ms",
       [&sc](const std::string& w, const std::string& v) {
         sc.prs.periodicity_s = detail::parse_double(w, v) * 1e-3;
       }},

      {"channel.rician_k_db", d(sc.channel.rician_k_db)},
      {"channel.occasion_corr", d(sc.channel.occasion_corr)},
      {"channel.echo_power_db", d(sc.channel.echo_power_db)},
      {"channel.echo_delay_ns",
       [&sc](const std::string& w, const std::string& v) {
         sc.channel.echo_delay_s = detail::parse_double(w, v) * 1e-9;
       }},
      {"channel.echo_corr", d(sc.channel.echo_corr)},

      {"receiver.doppler_min_hz", d(sc.grid.doppler_min_hz)},
      {"receiver.doppler_max_hz", d(sc.grid.doppler_max_hz)},
      {"receiver.doppler_step_hz", d(sc.grid.doppler_step_hz)},
      {"receiver.fine_doppler_step_hz", d(sc.grid.fine_doppler_step_hz)},
      {"receiver.fine_delay_oversample", i(sc.grid.fine_delay_oversample)},
      {"receiver.pfa", d(sc.detection.pfa)},
      {"receiver.combining",
       [&sc](const std::string& w, const std::string& v) {
         if (v == "noncoherent")
           sc.detection.combining = Combining::NonCoherent;
         else if (v == "coherent")
           sc.detection.combining = Combining::Coherent;
         else
           throw std::invalid_argument("scenario: " + w +
                                       ": expected 'noncoherent' or 'coherent', got '" + v + "'");
       }},
      {"receiver.rx_sample_rate_hz", d(sc.rx_sample_rate_hz)},
      {"receiver.assisted_doppler", b(sc.assisted_doppler)},
      {"receiver.assist_halfspan_hz", d(sc.assist_halfspan_hz)},
      {"receiver.delay_margin_us",
       [&sc](const std::string& w, const std::string& v) {
         sc.delay_margin_s = detail::parse_double(w, v) * 1e-6;
       }},

      {"schedule.max_sats", i(sc.max_sats)},
      {"schedule.min_elevation_deg", deg(sc.min_elevation_rad)},
      {"schedule.guard_slots", i(sc.guard_slots)},

      {"engine.window_s", d(sc.window_s)},
      {"engine.surface_constraint", b(sc.surface_constraint)},

      {"drops.count", i(sc.drops)},
      {"drops.area_lat_deg", deg(sc.area_lat_rad)},
      {"drops.area_lon_deg", deg(sc.area_lon_rad)},
      {"drops.area_diameter_km",
       [&sc](const std::string& w, const std::string& v) {
         sc.area_diameter_m = detail::parse_double(w, v) * 1e3;
       }},
      {"drops.master_seed",
       [&sc](const std::string& w, const std::string& v) {
         sc.master_seed = static_cast<uint64_t>(detail::parse_int(w, v));
       }},

      {"pd_sweep.snr_min_db", d(sc.pd_snr_min_db)},
      {"pd_sweep.snr_max_db", d(sc.pd_snr_max_db)},
      {"pd_sweep.snr_step_db", d(sc.pd_snr_step_db)},
      {"pd_sweep.trials", i(sc.pd_trials)},

      {"pin.enabled", b(sc.pin_enabled)},
      {"pin.elevation_deg", deg(sc.pin_elevation_rad)},
      {"pin.snr_bonus_db", d(sc.pin_snr_bonus_db)},
  };

  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("scenario: line " + std::to_string(lineno) +
                                    ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("scenario: line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const std::string where = "[" + section + "] " + key;
    const std::string full = section + "." + key;
    const auto it = keys.find(full);
    if (it == keys.end()) throw std::invalid_argument("scenario: " + where + ": unknown key");
    it->second(where, value);
  }
  sc.detection.n_ports = sc.link.ue_rx_ports;  // receiver ports follow the link config
  sc.validate();
  return sc;
}

inline Scenario parse_scenario_string(const std::string& text) {
  std::istringstream in(text);
  return parse_scenario(in);
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("scenario: cannot open '" + path + "'");
  return parse_scenario(in);
}

/// Canonical serialization: every key in a fixed order, used for the
/// result-table metadata hash and for writing template configs.
inline std::string serialize_scenario(const Scenario& sc) {
  std::ostringstream o;
  o.precision(17);
  o << "[constellation]\n"
    << "altitude_m = " << sc.constellation.altitude_m << "\n"
    << "inclination_deg = " << sc.constellation.inclination_rad / deg2rad(1.0) << "\n"
    << "num_planes = " << sc.constellation.num_planes << "\n"
    << "sats_per_plane = " << sc.constellation.sats_per_plane << "\n\n";
  o << "[link]\n"
    << "carrier_hz = " << sc.link.carrier_hz << "\n"
    << "eirp_density_dbw_per_mhz = " << sc.link.eirp_density_dbw_per_mhz << "\n"
    << "noise_figure_db = " << sc.link.noise_figure_db << "\n"
    << "antenna_temp_k = " << sc.link.antenna_temp_k << "\n"
    << "ue_rx_ports = " << sc.link.ue_rx_ports << "\n"
    << "atmos_margin_db = " << sc.link.atmos_margin_db << "\n"
    << "excess_loss_knee_deg = " << sc.link.excess_loss_knee_rad / deg2rad(1.0) << "\n"
    << "excess_loss_max_db = " << sc.link.excess_loss_max_db << "\n"
    << "snr_offset_db = " << sc.link.snr_offset_db << "\n\n";
  o << "[prs]\n"
    << "bandwidth_hz = " << sc.prs.bandwidth_hz << "\n"
    << "n_symbols = " << sc.prs.n_symbols << "\n"
    << "periodicity_ms = " << sc.prs.periodicity_s * 1e3 << "\n\n";
  o << "[channel]\n"
    << "rician_k_db = " << sc.channel.rician_k_db << "\n"
    << "occasion_corr = " << sc.channel.occasion_corr << "\n"
    << "echo_power_db = " << sc.channel.echo_power_db << "\n"
    << "echo_delay_ns = " << sc.channel.echo_delay_s * 1e9 << "\n"
    << "echo_corr = " << sc.channel.echo_corr << "\n\n";
  o << "[receiver]\n"
    << "doppler_min_hz = " << sc.grid.doppler_min_hz << "\n"
    << "doppler_max_hz = " << sc.grid.doppler_max_hz << "\n"
    << "doppler_step_hz = " << sc.grid.doppler_step_hz << "\n"
    << "fine_doppler_step_hz = " << sc.grid.fine_doppler_step_hz << "\n"
    << "fine_delay_oversample = " << sc.grid.fine_delay_oversample << "\n"
    << "pfa = " << sc.detection.pfa << "\n"
    << "combining = " << (sc.detection.combining == Combining::Coherent ? "coherent" : "noncoherent")
    << "\n"
    << "rx_sample_rate_hz = " << sc.rx_sample_rate_hz << "\n"
    << "assisted_doppler = " << (sc.assisted_doppler ? "true" : "false") << "\n"
    << "assist_halfspan_hz = " << sc.assist_halfspan_hz << "\n"
    << "delay_margin_us = " << sc.delay_margin_s * 1e6 << "\n\n";
  o << "[schedule]\n"
    << "max_sats = " << sc.max_sats << "\n"
    << "min_elevation_deg = " << sc.min_elevation_rad / deg2rad(1.0) << "\n"
    << "guard_slots = " << sc.guard_slots << "\n\n";
  o << "[engine]\n"
    << "window_s = " << sc.window_s << "\n"
    << "surface_constraint = " << (sc.surface_constraint ? "true" : "false") << "\n\n";
  o << "[drops]\n"
    << "count = " << sc.drops << "\n"
    << "area_lat_deg = " << sc.area_lat_rad / deg2rad(1.0) << "\n"
    << "area_lon_deg = " << sc.area_lon_rad / deg2rad(1.0) << "\n"
    << "area_diameter_km = " << sc.area_diameter_m / 1e3 << "\n"
    << "master_seed = " << sc.master_seed << "\n\n";
  o << "[pd_sweep]\n"
    << "snr_min_db = " << sc.pd_snr_min_db << "\n"
    << "snr_max_db = " << sc.pd_snr_max_db << "\n"
    << "snr_step_db = " << sc.pd_snr_step_db << "\n"
    << "trials = " << sc.pd_trials << "\n\n";
  o << "[pin]\n"
    << "enabled = " << (sc.pin_enabled ? "true" : "false") << "\n"
    << "elevation_deg = " << sc.pin_elevation_rad / deg2rad(1.0) << "\n"
    << "snr_bonus_db = " << sc.pin_snr_bonus_db << "\n";
  return o.str();
}

/// FNV-1a hash of the canonical serialization, hex string. Tables carry it as
/// metadata so plots can be traced back to the exact configuration.
inline std::string scenario_hash(const Scenario& sc) {
  const std::string s = serialize_scenario(sc);
  uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream o;
  o << std::hex << h;
  return o.str();
}

}  // namespace ntnpos
