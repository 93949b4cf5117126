#include <gtest/gtest.h>

#include <cmath>

#include "ntnpos/linkbudget.hpp"

using namespace ntnpos;

TEST(Fspl, ClosedFormOracle) {
  EXPECT_NEAR(fspl_db(600e3, 2e9), 154.0, 0.1);
}

TEST(Fspl, UnitArgumentIdentity) {
  const double f = 2e9;
  EXPECT_NEAR(fspl_db(kSpeedOfLight / (4.0 * kPi * f), f), 0.0, 1e-9);
}

TEST(Fspl, LogLawDoubling) {
  EXPECT_NEAR(fspl_db(1200e3, 2e9) - fspl_db(600e3, 2e9), 6.0206, 1e-3);
  EXPECT_THROW(fspl_db(-1.0, 2e9), std::invalid_argument);
}

TEST(BeamGain, BoresightIdentity) {
  const auto beam = make_service_beam();
  EXPECT_NEAR(beam_gain_db(beam, beam.boresight_dir), beam.peak_gain_dbi, 1e-12);
}

TEST(BeamGain, HalfPowerAtHpbwOver2) {
  const auto beam = make_service_beam();
  // rotate boresight by hpbw/2 in any plane
  const double a = beam.hpbw_rad / 2.0;
  const Vec3 dir(std::sin(a), 0.0, -std::cos(a));
  EXPECT_NEAR(beam_gain_db(beam, dir), beam.peak_gain_dbi - 3.0, 0.05);
}

TEST(BeamGain, ServiceFootprint50km) {
  const auto beam = make_service_beam(600e3);
  EXPECT_NEAR(rad2deg(beam.hpbw_rad), 4.77, 0.02);  // 2*atan(25/600)
}

TEST(BeamGain, FloorAndMonotone) {
  const auto beam = make_service_beam();
  double prev = beam.peak_gain_dbi + 1.0;
  for (double a = 0.0; a < deg2rad(60.0); a += deg2rad(0.5)) {
    const Vec3 dir(std::sin(a), 0.0, -std::cos(a));
    const double g = beam_gain_db(beam, dir);
    EXPECT_LE(g, prev + 1e-12);
    EXPECT_GE(g, beam.peak_gain_dbi - 30.0 - 1e-12);
    prev = g;
  }
}

namespace {
VisibilityRecord vis_at(double elev_deg, double alt_m = 600e3) {
  VisibilityRecord v;
  v.elevation_rad = deg2rad(elev_deg);
  v.slant_range_m = slant_range_from_elevation(v.elevation_rad, alt_m);
  return v;
}
}  // namespace

// Serving (47 deg) vs non-serving (26 deg) with equal beam gains: SNR gap
// should reproduce the paper's ~3.5 dB figure.
TEST(LinkSnr, ServingVsNonServingGap) {
  LinkParams p;
  const auto beam = make_service_beam();
  const double s47 = link_snr_db(p, vis_at(47.0), beam);
  const double s26 = link_snr_db(p, vis_at(26.0), beam);
  EXPECT_NEAR(s47 - s26, 3.5, 1.0);
}

TEST(LinkSnr, ZeroBandwidthRejected) {
  LinkParams p;
  p.bandwidth_hz = 0.0;
  EXPECT_THROW(link_snr_db(p, vis_at(45.0), make_service_beam()), std::invalid_argument);
}

// Near/far spread: zenith vs 15 deg elevation differs by more than 12 dB
// (slant-range oracle gives 8.7 dB; the rest comes from the low-elevation
// excess-loss model).
TEST(LinkSnr, NearFarSpreadExceeds12dB) {
  LinkParams p;
  const auto beam = make_service_beam();
  const double range_only =
      fspl_db(slant_range_from_elevation(deg2rad(15.0), 600e3), p.carrier_hz) -
      fspl_db(slant_range_from_elevation(deg2rad(90.0), 600e3), p.carrier_hz);
  EXPECT_NEAR(range_only, 8.66, 0.1);  // slant-range oracle
  const double gap = link_snr_db(p, vis_at(90.0), beam) - link_snr_db(p, vis_at(15.0), beam);
  EXPECT_GT(gap, 12.0);
}

TEST(LinkSnr, MonotoneInElevation) {
  LinkParams p;
  const auto beam = make_service_beam();
  double prev = -1e9;
  for (double e = 10.0; e <= 90.0; e += 5.0) {
    const double s = link_snr_db(p, vis_at(e), beam);
    EXPECT_GE(s, prev);
    prev = s;
  }
}

namespace {
// Orbit passing (nearly) over an equatorial UE around t ~ 500 s.
OrbitalElements overhead_orbit() {
  OrbitalElements el;
  el.sat_id = {0, 0};
  el.semi_major_axis_m = kEarthRadius + 600e3;
  el.inclination_rad = deg2rad(70.0);
  el.raan_rad = 0.0;
  el.anomaly0_rad = -mean_motion(el.semi_major_axis_m) * 500.0;
  return el;
}
}  // namespace

TEST(LinkProfile, DelayAtZenithOracle) {
  const auto el = overhead_orbit();
  // UE on the sub-satellite point at t = 500 (account for Earth rotation)
  const auto st = propagate(el, 500.0);
  double lat, lon, alt;
  ecef_to_geodetic(st.pos_ecef_m, lat, lon, alt);
  const auto ue = make_ue(lat, lon);
  LinkParams p;
  const auto prof = make_link_profile(el, ue, p, make_positioning_beam(Vec3(0, 0, -1)), 480.0,
                                      520.0, 0.5);
  EXPECT_NEAR(prof.delay_at(500.0), 600e3 / kSpeedOfLight, 2e-7);
  EXPECT_NEAR(prof.delay_at(500.0), 2.0014e-3, 1e-6);
}

TEST(LinkProfile, DopplerCrossesZeroAtClosestApproach) {
  const auto el = overhead_orbit();
  const auto st = propagate(el, 500.0);
  double lat, lon, alt;
  ecef_to_geodetic(st.pos_ecef_m, lat, lon, alt);
  const auto ue = make_ue(lat, lon);
  LinkParams p;
  const auto prof = make_link_profile(el, ue, p, make_positioning_beam(Vec3(0, 0, -1)), 400.0,
                                      600.0, 0.25);
  // locate minimum delay and check Doppler sign change there
  size_t imin = 0;
  for (size_t i = 0; i < prof.delay_s.size(); ++i)
    if (prof.delay_s[i] < prof.delay_s[imin]) imin = i;
  ASSERT_GT(imin, 0u);
  ASSERT_LT(imin, prof.delay_s.size() - 1);
  EXPECT_GT(prof.doppler_hz[imin - 1], 0.0);  // approaching before
  EXPECT_LT(prof.doppler_hz[imin + 1], 0.0);  // receding after
  EXPECT_LT(std::abs(prof.doppler_hz[imin]), 500.0);
}

// Max |Doppler| for low-elevation geometry is in the 30-45 kHz regime at
// 2 GHz; the kinematic bound (v/c)*fc ~ 50.4 kHz is never exceeded.
TEST(LinkProfile, LowElevationDopplerBand) {
  ConstellationSpec spec;
  const auto els = build_constellation(spec);
  const auto ue = make_ue(0.0, deg2rad(20.0));
  const double fc = 2e9;
  const double bound = std::sqrt(kEarthMu / (kEarthRadius + 600e3)) / kSpeedOfLight * fc;
  EXPECT_NEAR(bound, 50.4e3, 200.0);
  double max_fd = 0.0;
  for (double t = 0.0; t < 5800.0; t += 20.0) {
    for (size_t i = 0; i < els.size(); i += 7) {
      const auto st = propagate(els[i], t);
      if (auto rec = visibility(st, ue, deg2rad(15.0))) {
        const double fd = std::abs(-fc / kSpeedOfLight * rec->range_rate_mps);
        max_fd = std::max(max_fd, fd);
        EXPECT_LT(fd, bound);
      }
    }
  }
  EXPECT_GE(max_fd, 30e3);
  EXPECT_LE(max_fd, 45e3);
}

// Numerically differentiating delay(t) and scaling by -carrier reproduces
// doppler(t) within 1%.
TEST(LinkProfile, DopplerDelayConsistency) {
  const auto el = overhead_orbit();
  const auto ue = make_ue(deg2rad(3.0), deg2rad(4.0));
  LinkParams p;
  const auto prof =
      make_link_profile(el, ue, p, make_positioning_beam(Vec3(0, 0, -1)), 300.0, 700.0, 0.01);
  const double dt = prof.t_grid_s[1] - prof.t_grid_s[0];
  for (size_t i = 1; i + 1 < prof.t_grid_s.size(); i += 50) {
    const double fd_num = -p.carrier_hz * (prof.delay_s[i + 1] - prof.delay_s[i - 1]) / (2.0 * dt);
    if (std::abs(prof.doppler_hz[i]) > 1e3)
      EXPECT_NEAR(fd_num, prof.doppler_hz[i], 0.01 * std::abs(prof.doppler_hz[i]));
  }
}

TEST(LinkProfile, NeverVisibleRejected) {
  auto el = overhead_orbit();
  const auto ue = make_ue(deg2rad(-60.0), deg2rad(180.0));  // opposite side
  LinkParams p;
  EXPECT_THROW(
      make_link_profile(el, ue, p, make_positioning_beam(Vec3(0, 0, -1)), 490.0, 510.0, 1.0),
      std::runtime_error);
}
