#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ntnpos/constants.hpp"
#include "ntnpos/constellation.hpp"
#include "ntnpos/geodesy.hpp"

namespace ntnpos {

struct LinkParams {
  double carrier_hz = 2e9;
  double eirp_density_dbw_per_mhz = 34.0;
  double bandwidth_hz = 1e6;
  double noise_figure_db = 7.0;
  double antenna_temp_k = 290.0;
  int ue_rx_ports = 1;
  // Fixed atmospheric/scintillation margin at zenith plus a low-elevation
  // excess (shadowing/clutter) that grows quadratically below the knee.
  double atmos_margin_db = 1.0;
  double excess_loss_knee_rad = deg2rad(30.0);
  double excess_loss_max_db = 20.0;  // quadratic excess extrapolated to 0 elevation
  // Scenario-level calibration of the absolute SNR operating point.
  double snr_offset_db = 0.0;

  void validate() const {
    if (!(bandwidth_hz > 0.0)) throw std::invalid_argument("link: bandwidth must be positive");
    if (ue_rx_ports != 1 && ue_rx_ports != 2)
      throw std::invalid_argument("link: ue_rx_ports must be 1 or 2");
  }
};

enum class BeamKind { Service, Positioning };

/// Parametric antenna beam: raised-cosine main lobe in dB with a flat floor
/// 30 dB below the peak. Gains are relative to the service-beam boresight
/// reference implied by the configured EIRP density.
struct BeamModel {
  BeamKind beam_kind = BeamKind::Service;
  Vec3 boresight_dir = Vec3(0, 0, -1);  // unit vector, satellite frame
  double hpbw_rad = 2.0 * std::atan2(25e3, 600e3);
  double peak_gain_dbi = 0.0;
  double floor_rel_db = -30.0;
};

/// Service beam sized for a 50 km footprint at nadir from the given altitude.
inline BeamModel make_service_beam(double altitude_m = 600e3, double footprint_diameter_m = 50e3) {
  BeamModel b;
  b.beam_kind = BeamKind::Service;
  b.hpbw_rad = 2.0 * std::atan2(0.5 * footprint_diameter_m, altitude_m);
  b.peak_gain_dbi = 0.0;
  return b;
}

/// Positioning beam: 3x wider than the service beam with peak gain reduced by
/// 9.5 dB (area-conservation heuristic), steered at the coverage area.
inline BeamModel make_positioning_beam(const Vec3& boresight, double altitude_m = 600e3) {
  BeamModel b = make_service_beam(altitude_m);
  b.beam_kind = BeamKind::Positioning;
  b.boresight_dir = boresight.normalized();
  b.hpbw_rad *= 3.0;
  b.peak_gain_dbi = -9.5;
  return b;
}

inline double fspl_db(double slant_range_m, double carrier_hz) {
  if (!(slant_range_m > 0.0) || !(carrier_hz > 0.0))
    throw std::invalid_argument("fspl: range and frequency must be positive");
  return 20.0 * std::log10(4.0 * kPi * slant_range_m * carrier_hz / kSpeedOfLight);
}

inline double beam_gain_db(const BeamModel& beam, const Vec3& direction) {
  const double cosang = std::clamp(beam.boresight_dir.normalized().dot(direction.normalized()), -1.0, 1.0);
  const double theta = std::acos(cosang);
  // raised cosine in dB, exactly -3 dB at hpbw/2, floor at -30 dB relative
  static const double kNullScale = kPi / (2.0 * std::acos(0.8));  // main lobe null at ~2.44*hpbw
  const double theta_null = kNullScale * beam.hpbw_rad;
  double rel;
  if (theta >= theta_null) {
    rel = beam.floor_rel_db;
  } else {
    rel = -15.0 * (1.0 - std::cos(kPi * theta / theta_null));
    rel = std::max(rel, beam.floor_rel_db);
  }
  return beam.peak_gain_dbi + rel;
}

inline double atmospheric_loss_db(const LinkParams& params, double elevation_rad) {
  double loss = params.atmos_margin_db;
  if (elevation_rad < params.excess_loss_knee_rad) {
    const double x = (params.excess_loss_knee_rad - std::max(elevation_rad, 0.0)) /
                     params.excess_loss_knee_rad;
    loss += params.excess_loss_max_db * x * x;
  }
  return loss;
}

/// In-band SNR of one satellite-UE link. `sat_to_ue` is the unit vector from
/// the satellite towards the UE used to evaluate the beam pattern.
inline double link_snr_db(const LinkParams& params, const VisibilityRecord& vis,
                          const BeamModel& beam, const Vec3& sat_to_ue) {
  params.validate();
  const double bw_mhz_db = 10.0 * std::log10(params.bandwidth_hz / 1e6);
  const double eirp_dbw = params.eirp_density_dbw_per_mhz + bw_mhz_db;
  const double noise_dbw = 10.0 * std::log10(kBoltzmann * params.antenna_temp_k * params.bandwidth_hz) +
                           params.noise_figure_db;
  return eirp_dbw + beam_gain_db(beam, sat_to_ue) - fspl_db(vis.slant_range_m, params.carrier_hz) -
         atmospheric_loss_db(params, vis.elevation_rad) - noise_dbw + params.snr_offset_db;
}

/// Overload evaluating the beam at boresight (UE on the beam axis).
inline double link_snr_db(const LinkParams& params, const VisibilityRecord& vis,
                          const BeamModel& beam) {
  return link_snr_db(params, vis, beam, beam.boresight_dir);
}

inline Vec3 rotate_z(const Vec3& p, double angle_rad) {
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  return {c * p.x() - s * p.y(), s * p.x() + c * p.y(), p.z()};
}

/// Signal flight time for reception at ECEF-fixed `ue_pos` at time t_rx.
/// Solves the light-time equation with the Earth-rotation (Sagnac) correction
/// by fixed-point iteration.
inline double light_time_delay(const OrbitalElements& el, const Vec3& ue_pos, double t_rx) {
  double tau = (propagate(el, t_rx).pos_ecef_m - ue_pos).norm() / kSpeedOfLight;
  for (int it = 0; it < 3; ++it) {
    const Vec3 s = propagate(el, t_rx - tau).pos_ecef_m;
    tau = (rotate_z(s, -kEarthRotationRate * tau) - ue_pos).norm() / kSpeedOfLight;
  }
  return tau;
}

struct LinkProfile {
  SatId sat_id;
  std::vector<double> t_grid_s;
  std::vector<double> delay_s;
  std::vector<double> doppler_hz;   // positive when approaching
  std::vector<double> snr_db;       // per-port in-band SNR
  std::vector<double> elevation_rad;

  bool covers(double t0, double t1) const {
    return !t_grid_s.empty() && t_grid_s.front() <= t0 && t_grid_s.back() >= t1;
  }

  double interp(const std::vector<double>& y, double t) const {
    if (!covers(t, t)) throw std::out_of_range("link profile does not cover requested time");
    if (t_grid_s.size() == 1) return y.front();
    const double dt = t_grid_s[1] - t_grid_s[0];
    double x = (t - t_grid_s.front()) / dt;
    const size_t i = std::min(static_cast<size_t>(std::max(x, 0.0)), t_grid_s.size() - 2);
    const double f = x - static_cast<double>(i);
    return y[i] + f * (y[i + 1] - y[i]);
  }

  double delay_at(double t) const { return interp(delay_s, t); }
  double doppler_at(double t) const { return interp(doppler_hz, t); }
  double snr_at(double t) const { return interp(snr_db, t); }
};

/// Sampled delay/Doppler/SNR series for one satellite pass segment.
/// Doppler is defined as -carrier * d(delay)/dt so the two series stay
/// numerically consistent.
inline LinkProfile make_link_profile(const OrbitalElements& el, const UeLocation& ue,
                                     const LinkParams& params, const BeamModel& beam,
                                     double t_start, double t_end, double dt = 1e-3) {
  if (!(t_end > t_start) || !(dt > 0.0))
    throw std::invalid_argument("link profile: bad time span");
  LinkProfile prof;
  prof.sat_id = el.sat_id;
  bool ever_visible = false;
  const double ddt = std::min(dt, 1e-3);  // finite-difference step for Doppler
  for (double t = t_start; t <= t_end + 0.5 * dt; t += dt) {
    const double tau = light_time_delay(el, ue.pos_ecef_m, t);
    const double tau_p = light_time_delay(el, ue.pos_ecef_m, t + ddt);
    const double tau_m = light_time_delay(el, ue.pos_ecef_m, t - ddt);
    const auto st = propagate(el, t);
    const auto vis = visibility(st, ue, -kPi);  // record regardless of horizon
    const Vec3 sat_to_ue = (ue.pos_ecef_m - st.pos_ecef_m).normalized();
    prof.t_grid_s.push_back(t);
    prof.delay_s.push_back(tau);
    prof.doppler_hz.push_back(-params.carrier_hz * (tau_p - tau_m) / (2.0 * ddt));
    prof.snr_db.push_back(link_snr_db(params, *vis, beam, sat_to_ue));
    prof.elevation_rad.push_back(vis->elevation_rad);
    if (vis->elevation_rad > 0.0) ever_visible = true;
  }
  if (!ever_visible)
    throw std::runtime_error("link profile: satellite never visible in the requested span");
  return prof;
}

}  // namespace ntnpos
