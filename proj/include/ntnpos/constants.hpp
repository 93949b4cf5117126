#pragma once

namespace ntnpos {

// Physical constants (SI units).
inline constexpr double kSpeedOfLight = 299792458.0;            // m/s
inline constexpr double kEarthMu = 3.986004418e14;              // m^3/s^2
inline constexpr double kEarthRadius = 6371e3;                  // m, spherical model
inline constexpr double kEarthRotationRate = 7.2921159e-5;      // rad/s
inline constexpr double kBoltzmann = 1.380649e-23;              // J/K

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

}  // namespace ntnpos
