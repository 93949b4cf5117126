#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ntnpos/constants.hpp"
#include "ntnpos/geodesy.hpp"

namespace ntnpos {

struct SatId {
  int plane = 0;
  int index = 0;
  friend bool operator==(const SatId&, const SatId&) = default;
  friend auto operator<=>(const SatId&, const SatId&) = default;
};

struct ConstellationSpec {
  double altitude_m = 600e3;
  double inclination_rad = deg2rad(70.0);
  int num_planes = 30;
  int sats_per_plane = 28;
  // RAAN spread evenly over 2*pi by default.
  double raan_spacing_rad = 0.0;   // 0 -> 2*pi / num_planes
  // Walker-delta style inter-plane phasing by default.
  double phase_offset_rad = -1.0;  // <0 -> (2*pi / sats_per_plane) / num_planes

  void validate() const {
    if (num_planes < 1 || sats_per_plane < 1)
      throw std::invalid_argument("constellation: plane/satellite counts must be >= 1");
    if (!(inclination_rad > 0.0) || inclination_rad > kPi)
      throw std::invalid_argument("constellation: inclination outside (0, pi]");
    if (!(altitude_m > 0.0))
      throw std::invalid_argument("constellation: altitude must be positive");
  }
};

/// Circular-orbit elements for one satellite.
struct OrbitalElements {
  SatId sat_id;
  double semi_major_axis_m = 0.0;
  double inclination_rad = 0.0;
  double raan_rad = 0.0;
  double anomaly0_rad = 0.0;  // in-plane angle at t = 0
};

struct SatelliteState {
  SatId sat_id;
  Vec3 pos_ecef_m = Vec3::Zero();
  Vec3 vel_ecef_mps = Vec3::Zero();
  double epoch_s = 0.0;
};

struct VisibilityRecord {
  SatId sat_id;
  double elevation_rad = 0.0;
  double azimuth_rad = 0.0;
  double slant_range_m = 0.0;
  double range_rate_mps = 0.0;  // d(slant range)/dt, negative when approaching
  bool ascending = false;
};

inline double mean_motion(double semi_major_axis_m) {
  return std::sqrt(kEarthMu / (semi_major_axis_m * semi_major_axis_m * semi_major_axis_m));
}

inline double orbital_period_s(double semi_major_axis_m) {
  return kTwoPi / mean_motion(semi_major_axis_m);
}

inline std::vector<OrbitalElements> build_constellation(const ConstellationSpec& spec) {
  spec.validate();
  const double a = kEarthRadius + spec.altitude_m;
  const double raan_step =
      spec.raan_spacing_rad > 0.0 ? spec.raan_spacing_rad : kTwoPi / spec.num_planes;
  const double phase =
      spec.phase_offset_rad >= 0.0 ? spec.phase_offset_rad
                                   : (kTwoPi / spec.sats_per_plane) / spec.num_planes;
  std::vector<OrbitalElements> out;
  out.reserve(static_cast<size_t>(spec.num_planes) * spec.sats_per_plane);
  for (int p = 0; p < spec.num_planes; ++p) {
    for (int s = 0; s < spec.sats_per_plane; ++s) {
      OrbitalElements el;
      el.sat_id = {p, s};
      el.semi_major_axis_m = a;
      el.inclination_rad = spec.inclination_rad;
      el.raan_rad = raan_step * p;
      el.anomaly0_rad = kTwoPi * s / spec.sats_per_plane + phase * p;
      out.push_back(el);
    }
  }
  return out;
}

/// Inertial position/velocity of a circular orbit at time t.
inline void propagate_inertial(const OrbitalElements& el, double t, Vec3& pos, Vec3& vel) {
  const double a = el.semi_major_axis_m;
  const double n = mean_motion(a);
  const double u = el.anomaly0_rad + n * t;
  const double cu = std::cos(u), su = std::sin(u);
  const double co = std::cos(el.raan_rad), so = std::sin(el.raan_rad);
  const double ci = std::cos(el.inclination_rad), si = std::sin(el.inclination_rad);
  pos = a * Vec3{co * cu - so * ci * su, so * cu + co * ci * su, si * su};
  vel = a * n * Vec3{-co * su - so * ci * cu, -so * su + co * ci * cu, si * cu};
}

/// ECEF state at time t. The ECEF frame is aligned with the inertial frame at
/// t = 0 and rotates at the Earth rate.
inline SatelliteState propagate(const OrbitalElements& el, double t) {
  if (t < 0.0) throw std::invalid_argument("propagate: t must be >= 0");
  Vec3 pi, vi;
  propagate_inertial(el, t, pi, vi);
  const double theta = kEarthRotationRate * t;
  const double c = std::cos(theta), s = std::sin(theta);
  // Rz(-theta)
  SatelliteState st;
  st.sat_id = el.sat_id;
  st.epoch_s = t;
  st.pos_ecef_m = {c * pi.x() + s * pi.y(), -s * pi.x() + c * pi.y(), pi.z()};
  const Vec3 v_rot = {c * vi.x() + s * vi.y(), -s * vi.x() + c * vi.y(), vi.z()};
  const Vec3 omega = {0.0, 0.0, kEarthRotationRate};
  st.vel_ecef_mps = v_rot - omega.cross(st.pos_ecef_m);
  return st;
}

inline std::optional<VisibilityRecord> visibility(const SatelliteState& state,
                                                  const UeLocation& ue,
                                                  double min_elev_rad) {
  const Vec3 d = state.pos_ecef_m - ue.pos_ecef_m;
  const double range = d.norm();
  const EnuFrame f = enu_frame(ue);
  const Vec3 dhat = d / range;
  const double elev = std::asin(dhat.dot(f.up));
  if (elev < min_elev_rad) return std::nullopt;
  VisibilityRecord rec;
  rec.sat_id = state.sat_id;
  rec.elevation_rad = elev;
  rec.azimuth_rad = std::atan2(dhat.dot(f.east), dhat.dot(f.north));
  rec.slant_range_m = range;
  rec.range_rate_mps = dhat.dot(state.vel_ecef_mps);  // UE fixed in ECEF
  rec.ascending = state.vel_ecef_mps.z() > 0.0;
  return rec;
}

struct VisibleCountCdf {
  double min_elev_rad = 0.0;
  // cdf[k] = P(count <= k); indices 0..max_count
  std::vector<double> cdf;
  int min_count = 0;
  int max_count = 0;
};

inline std::vector<VisibleCountCdf> visible_count_cdf(
    const ConstellationSpec& spec, const std::vector<UeLocation>& ue_drops,
    const std::vector<double>& min_elev_list, const std::vector<double>& epochs) {
  if (ue_drops.empty() || epochs.empty() || min_elev_list.empty())
    throw std::invalid_argument("visible_count_cdf: empty input");
  const auto elements = build_constellation(spec);
  std::vector<std::vector<int>> counts(min_elev_list.size());
  for (double t : epochs) {
    std::vector<SatelliteState> states;
    states.reserve(elements.size());
    for (const auto& el : elements) states.push_back(propagate(el, t));
    for (const auto& ue : ue_drops) {
      for (size_t j = 0; j < min_elev_list.size(); ++j) {
        int n = 0;
        for (const auto& st : states)
          if (visibility(st, ue, min_elev_list[j])) ++n;
        counts[j].push_back(n);
      }
    }
  }
  std::vector<VisibleCountCdf> out;
  for (size_t j = 0; j < min_elev_list.size(); ++j) {
    VisibleCountCdf table;
    table.min_elev_rad = min_elev_list[j];
    int maxc = 0, minc = counts[j].empty() ? 0 : counts[j][0];
    for (int c : counts[j]) {
      maxc = std::max(maxc, c);
      minc = std::min(minc, c);
    }
    table.min_count = minc;
    table.max_count = maxc;
    table.cdf.assign(static_cast<size_t>(maxc) + 1, 0.0);
    for (int c : counts[j]) table.cdf[static_cast<size_t>(c)] += 1.0;
    double acc = 0.0;
    for (auto& v : table.cdf) {
      acc += v;
      v = acc / static_cast<double>(counts[j].size());
    }
    out.push_back(std::move(table));
  }
  return out;
}

}  // namespace ntnpos
