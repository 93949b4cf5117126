#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "ntnpos/constants.hpp"

namespace ntnpos {

using Vec3 = Eigen::Vector3d;

/// Ground terminal location on the spherical Earth model.
struct UeLocation {
  double lat_rad = 0.0;
  double lon_rad = 0.0;
  double alt_m = 0.0;
  Vec3 pos_ecef_m = Vec3::Zero();
};

inline Vec3 geodetic_to_ecef(double lat_rad, double lon_rad, double alt_m) {
  const double r = kEarthRadius + alt_m;
  return {r * std::cos(lat_rad) * std::cos(lon_rad),
          r * std::cos(lat_rad) * std::sin(lon_rad),
          r * std::sin(lat_rad)};
}

inline void ecef_to_geodetic(const Vec3& p, double& lat_rad, double& lon_rad,
                             double& alt_m) {
  const double r = p.norm();
  lat_rad = std::asin(p.z() / r);
  lon_rad = std::atan2(p.y(), p.x());
  alt_m = r - kEarthRadius;
}

inline UeLocation make_ue(double lat_rad, double lon_rad, double alt_m = 0.0) {
  UeLocation ue;
  ue.lat_rad = lat_rad;
  ue.lon_rad = lon_rad;
  ue.alt_m = alt_m;
  ue.pos_ecef_m = geodetic_to_ecef(lat_rad, lon_rad, alt_m);
  return ue;
}

/// Local East/North/Up unit vectors at a ground location.
struct EnuFrame {
  Vec3 east, north, up;
};

inline EnuFrame enu_frame(double lat_rad, double lon_rad) {
  const double sl = std::sin(lat_rad), cl = std::cos(lat_rad);
  const double so = std::sin(lon_rad), co = std::cos(lon_rad);
  EnuFrame f;
  f.east = {-so, co, 0.0};
  f.north = {-sl * co, -sl * so, cl};
  f.up = {cl * co, cl * so, sl};
  return f;
}

inline EnuFrame enu_frame(const UeLocation& ue) { return enu_frame(ue.lat_rad, ue.lon_rad); }

/// Slant range from elevation angle and orbit altitude on the spherical model.
/// Law-of-cosines form: sqrt(Re^2 sin^2(e) + 2 Re h + h^2) - Re sin(e).
inline double slant_range_from_elevation(double elev_rad, double alt_m,
                                         double earth_radius = kEarthRadius) {
  const double rs = earth_radius * std::sin(elev_rad);
  return std::sqrt(rs * rs + 2.0 * earth_radius * alt_m + alt_m * alt_m) - rs;
}

}  // namespace ntnpos
