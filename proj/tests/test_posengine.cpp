#include <gtest/gtest.h>

#include <cmath>

#include "ntnpos/posengine.hpp"

using namespace ntnpos;

namespace {

// Noiseless measurement geometry built from the default constellation: the
// TOAs are generated with the same emission-time + Earth-rotation flight-time
// model the engine inverts, so the truth is an exact fixed point.
struct Geometry {
  NavMessage nav;
  UeLocation ue;
  std::vector<Measurement> meas;
  double window_start_s = 0.0;
};

Geometry make_geometry(int n_sats, double ue_lat = 0.021, double ue_lon = 0.013,
                       double epoch_s = 300.0) {
  Geometry g;
  g.ue = make_ue(ue_lat, ue_lon);
  g.window_start_s = epoch_s;
  ConstellationSpec spec;
  const auto els = build_constellation(spec);
  std::vector<VisibilityRecord> vis;
  std::map<SatId, OrbitalElements> by_id;
  for (const auto& el : els) {
    by_id[el.sat_id] = el;
    const auto st = propagate(el, epoch_s);
    if (const auto v = visibility(st, g.ue, deg2rad(15.0))) vis.push_back(*v);
  }
  g.nav.schedule = schedule_prs(vis, n_sats, make_prs_config(1e6, 1), epoch_s);
  double snr = 20.0;
  for (const auto& e : g.nav.schedule.entries) {
    g.nav.ephemeris[e.sat_id] = by_id.at(e.sat_id);
    const double t_tx = g.nav.schedule.slot_start_s(e);
    const Vec3 s = propagate(by_id.at(e.sat_id), t_tx).pos_ecef_m;
    double tau = (s - g.ue.pos_ecef_m).norm() / kSpeedOfLight;
    for (int it = 0; it < 6; ++it)
      tau = (rotate_z(s, -kEarthRotationRate * tau) - g.ue.pos_ecef_m).norm() / kSpeedOfLight;
    Measurement m;
    m.sat_id = e.sat_id;
    m.detected = true;
    m.toa_s = t_tx + tau;
    m.doppler_hz = 0.0;
    m.snr_est_db = snr;
    snr -= 3.0;  // ref = first scheduled (highest elevation) satellite
    g.meas.push_back(m);
  }
  return g;
}

Vec3 area_center_offset(const Geometry& g, double east_m, double north_m) {
  const EnuFrame f = enu_frame(g.ue);
  Vec3 p = g.ue.pos_ecef_m + east_m * f.east + north_m * f.north;
  return p * (g.ue.pos_ecef_m.norm() / p.norm());
}

}  // namespace

TEST(FormTdoa, PairCountAndReference) {
  auto g = make_geometry(4);
  const auto set = form_tdoa(g.meas, g.nav, g.window_start_s);
  ASSERT_TRUE(set.has_value());
  EXPECT_EQ(set->pairs.size(), 3u);  // 4 detections -> 3 pairs
  EXPECT_EQ(set->ref_sat_id, g.meas[0].sat_id);  // highest SNR
  EXPECT_EQ(set->sat_positions.size(), 4u);

  // 3 detections -> 2 pairs
  auto partial = g.meas;
  partial[3].detected = false;
  const auto set3 = form_tdoa(partial, g.nav, g.window_start_s);
  ASSERT_TRUE(set3.has_value());
  EXPECT_EQ(set3->pairs.size(), 2u);

  // single detection -> nothing
  auto single = g.meas;
  for (size_t i = 1; i < single.size(); ++i) single[i].detected = false;
  EXPECT_FALSE(form_tdoa(single, g.nav, g.window_start_s).has_value());
}

TEST(FormTdoa, HarmonicWeights) {
  auto g = make_geometry(3);
  const auto set = form_tdoa(g.meas, g.nav, g.window_start_s);
  ASSERT_TRUE(set.has_value());
  const double sref = std::pow(10.0, g.meas[0].snr_est_db / 10.0);
  for (const auto& p : set->pairs) {
    double si = 0.0;
    for (const auto& m : g.meas)
      if (m.sat_id == p.sat_id) si = std::pow(10.0, m.snr_est_db / 10.0);
    EXPECT_NEAR(p.weight, 1.0 / (1.0 / si + 1.0 / sref), 1e-9);
  }
}

// Noiseless TOAs reproduce geometric range differences exactly: the residual
// at the true position vanishes.
TEST(FormTdoa, GeometryOracle) {
  auto g = make_geometry(4);
  const auto set = form_tdoa(g.meas, g.nav, g.window_start_s);
  ASSERT_TRUE(set.has_value());
  const Vec3& p = g.ue.pos_ecef_m;
  const Vec3& ref = set->sat_positions.at(set->ref_sat_id);
  for (const auto& pr : set->pairs) {
    const Vec3& s = set->sat_positions.at(pr.sat_id);
    const double rd = (s - p).norm() - (ref - p).norm();
    // tolerance set by double cancellation: TOAs carry the ~300 s absolute
    // epoch, so tau = toa - t_tx keeps ~1e-13 s (~3e-5 m) of precision
    EXPECT_NEAR(kSpeedOfLight * pr.tdoa_s, rd, 1e-4);
  }
}

TEST(SolveWnls, NoiselessRecoversTruth) {
  auto g = make_geometry(4);
  const auto set = form_tdoa(g.meas, g.nav, g.window_start_s);
  ASSERT_TRUE(set.has_value());
  const Vec3 init = area_center_offset(g, 18e3, -12e3);  // within the 50 km drop area
  const auto est = solve_wnls({*set}, std::nullopt, true, init);
  EXPECT_TRUE(est.converged);
  EXPECT_LT((est.pos_ecef_m - g.ue.pos_ecef_m).norm(), 1e-3);
  EXPECT_LT(est.residual_rms_m, 1e-3);
  EXPECT_GT(est.dop, 0.0);
}

TEST(SolveWnls, TruthIsFixedPoint) {
  auto g = make_geometry(4);
  const auto set = form_tdoa(g.meas, g.nav, g.window_start_s);
  const auto est = solve_wnls({*set}, std::nullopt, true, g.ue.pos_ecef_m);
  EXPECT_TRUE(est.converged);
  // bounded by the same epoch-magnitude cancellation as the TDOA oracle
  EXPECT_LT((est.pos_ecef_m - g.ue.pos_ecef_m).norm(), 1e-3);
  EXPECT_LT(est.residual_rms_m, 1e-4);
}

TEST(SolveWnls, ConvergenceBasinAcrossDropArea) {
  auto g = make_geometry(4);
  const auto set = form_tdoa(g.meas, g.nav, g.window_start_s);
  for (double e : {-25e3, 0.0, 25e3})
    for (double n : {-25e3, 0.0, 25e3}) {
      const auto est = solve_wnls({*set}, std::nullopt, true, area_center_offset(g, e, n));
      EXPECT_TRUE(est.converged);
      EXPECT_LT((est.pos_ecef_m - g.ue.pos_ecef_m).norm(), 1e-3) << e << "," << n;
    }
}

TEST(SolveWnls, DuplicatedMeasurementEqualsDoubledWeight) {
  auto g = make_geometry(4);
  auto set = *form_tdoa(g.meas, g.nav, g.window_start_s);
  // perturb so the argmin is nontrivial
  for (size_t i = 0; i < set.pairs.size(); ++i)
    set.pairs[i].tdoa_s += (i % 2 ? 1.0 : -1.0) * 40e-9;
  TdoaSet doubled = set;
  doubled.pairs[0].weight *= 2.0;
  TdoaSet twice = set;
  twice.pairs.push_back(set.pairs[0]);
  const Vec3 init = area_center_offset(g, 5e3, 5e3);
  const auto ea = solve_wnls({doubled}, std::nullopt, true, init);
  const auto eb = solve_wnls({twice}, std::nullopt, true, init);
  EXPECT_LT((ea.pos_ecef_m - eb.pos_ecef_m).norm(), 1e-4);
}

TEST(SolveWnls, WeightScaleInvariance) {
  auto g = make_geometry(4);
  auto set = *form_tdoa(g.meas, g.nav, g.window_start_s);
  for (size_t i = 0; i < set.pairs.size(); ++i)
    set.pairs[i].tdoa_s += (i % 2 ? 1.0 : -1.0) * 40e-9;
  TdoaSet scaled = set;
  for (auto& p : scaled.pairs) p.weight *= 7.0;
  const Vec3 init = area_center_offset(g, 5e3, 5e3);
  const auto ea = solve_wnls({set}, std::nullopt, true, init);
  const auto eb = solve_wnls({scaled}, std::nullopt, true, init);
  EXPECT_LT((ea.pos_ecef_m - eb.pos_ecef_m).norm(), 1e-4);
}

TEST(SolveWnls, TranslationEquivariance) {
  // Synthetic spread geometry: scheduled satellites cluster near zenith, which
  // leaves the vertical nearly unobservable, so the unconstrained 3D solve
  // needs hand-placed satellites with angular diversity.
  const Vec3 ue(kEarthRadius, 0.0, 0.0);
  const double h = kEarthRadius + 600e3;
  TdoaSet set;
  set.ref_sat_id = {0, 0};
  set.sat_positions[{0, 0}] = Vec3(h, 0.0, 0.0);
  set.sat_positions[{0, 1}] = Vec3(h - 2e5, 1.2e6, 0.0);
  set.sat_positions[{0, 2}] = Vec3(h - 2e5, 0.0, 1.2e6);
  set.sat_positions[{0, 3}] = Vec3(h - 3e5, -1.0e6, -0.9e6);
  const Vec3& ref = set.sat_positions.at(set.ref_sat_id);
  for (int i = 1; i <= 3; ++i) {
    const Vec3& s = set.sat_positions.at({0, i});
    const double rd = (s - ue).norm() - (ref - ue).norm();
    set.pairs.push_back({{0, i}, rd / kSpeedOfLight, 1.0});
  }
  const Vec3 shift(1500.0, -2200.0, 800.0);
  TdoaSet moved = set;
  for (auto& [id, pos] : moved.sat_positions) pos += shift;
  const Vec3 init = ue + Vec3(3e3, -2e3, 1e3);
  const auto ea = solve_wnls({set}, std::nullopt, false, init);
  const auto eb = solve_wnls({moved}, std::nullopt, false, init + shift);
  EXPECT_TRUE(ea.converged);
  EXPECT_LT((ea.pos_ecef_m - ue).norm(), 1e-3);
  EXPECT_LT(((eb.pos_ecef_m - shift) - ea.pos_ecef_m).norm(), 1e-3);
}

TEST(SolveWnls, InsufficientPairsRejected) {
  auto g = make_geometry(2);
  const auto set = form_tdoa(g.meas, g.nav, g.window_start_s);
  ASSERT_TRUE(set.has_value());
  ASSERT_EQ(set->pairs.size(), 1u);
  EXPECT_THROW(solve_wnls({*set}, std::nullopt, true, g.ue.pos_ecef_m), std::invalid_argument);
}

TEST(SolveWnls, PriorPseudoMeasurementPullsSolution) {
  auto g = make_geometry(4);
  auto set = *form_tdoa(g.meas, g.nav, g.window_start_s);
  for (auto& p : set.pairs) p.weight *= 1e-12;  // nearly uninformative data
  PositionEstimate prior;
  prior.converged = true;
  prior.pos_ecef_m = area_center_offset(g, 2e3, 0.0);
  prior.covariance = Eigen::Matrix3d::Identity() * 100.0;  // 10 m sigma
  const auto est = solve_wnls({set}, prior, true, g.ue.pos_ecef_m);
  EXPECT_LT((est.pos_ecef_m - prior.pos_ecef_m).norm(), 10.0);
}

TEST(Gdop, CollinearGeometrySingular) {
  TdoaSet set;
  set.ref_sat_id = {0, 0};
  const Vec3 ue(kEarthRadius, 0.0, 0.0);
  set.sat_positions[{0, 0}] = Vec3(kEarthRadius + 600e3, 0.0, 0.0);
  set.sat_positions[{0, 1}] = Vec3(kEarthRadius + 600e3, 3e5, 0.0);
  set.sat_positions[{0, 2}] = Vec3(kEarthRadius + 600e3, -4e5, 0.0);
  set.pairs.push_back({{0, 1}, 0.0, 1.0});
  set.pairs.push_back({{0, 2}, 0.0, 1.0});
  EXPECT_THROW(gdop(set, ue), std::runtime_error);
}

TEST(Gdop, MoreSatellitesNeverWorse) {
  auto g6 = make_geometry(6);
  const auto s6 = *form_tdoa(g6.meas, g6.nav, g6.window_start_s);
  TdoaSet s4 = s6;
  s4.pairs.resize(3);  // 4-satellite subset (same reference)
  const double d6 = gdop(s6, g6.ue.pos_ecef_m);
  const double d4 = gdop(s4, g6.ue.pos_ecef_m);
  EXPECT_GT(d6, 0.0);
  EXPECT_LE(d6, d4 + 1e-12);
}

TEST(Gdop, SpreadGeometryBeatsNarrow) {
  const Vec3 ue(kEarthRadius, 0.0, 0.0);
  const double h = kEarthRadius + 600e3;
  TdoaSet spread;
  spread.ref_sat_id = {0, 0};
  spread.sat_positions[{0, 0}] = Vec3(h, 0.0, 0.0);
  spread.sat_positions[{0, 1}] = Vec3(h, 8e5, 0.0);
  spread.sat_positions[{0, 2}] = Vec3(h, 0.0, 8e5);
  spread.pairs.push_back({{0, 1}, 0.0, 1.0});
  spread.pairs.push_back({{0, 2}, 0.0, 1.0});
  TdoaSet narrow = spread;
  narrow.sat_positions[{0, 2}] = Vec3(h, 7.6e5, 1e5);  // nearly parallel to the first pair
  EXPECT_LT(gdop(spread, ue), gdop(narrow, ue));
}

TEST(CombineWindow, AveragingGainOverOccasions) {
  auto g = make_geometry(4);
  const auto clean = *form_tdoa(g.meas, g.nav, g.window_start_s);
  auto rng = make_rng(77, 0);
  std::normal_distribution<double> noise(0.0, 30e-9);  // ~9 m ranging sigma
  double se1 = 0.0, se10 = 0.0;
  const int trials = 25;
  const Vec3 init = area_center_offset(g, 10e3, 0.0);
  for (int t = 0; t < trials; ++t) {
    CombiningWindow win;
    win.window_s = 0.400;
    std::optional<PositionEstimate> est;
    for (int k = 0; k < 10; ++k) {
      TdoaSet s = clean;
      s.occasion_index = k;
      s.t_s = g.window_start_s + k * 0.040;
      for (auto& p : s.pairs) p.tdoa_s += noise(rng);
      est = combine_window(win, s, s.t_s, init);
      if (k == 0) {
        const double e = (est->pos_ecef_m - g.ue.pos_ecef_m).norm();
        se1 += e * e;
      }
    }
    const double e = (est->pos_ecef_m - g.ue.pos_ecef_m).norm();
    se10 += e * e;
  }
  const double rms1 = std::sqrt(se1 / trials), rms10 = std::sqrt(se10 / trials);
  EXPECT_LT(rms10, rms1);                          // strictly better
  EXPECT_GT(rms10, rms1 / (2.0 * std::sqrt(10)));  // sqrt(N) trend within factor 2
}

TEST(CombineWindow, EvictionAndEmptySet) {
  auto g = make_geometry(4);
  const auto clean = *form_tdoa(g.meas, g.nav, g.window_start_s);
  CombiningWindow win;
  win.window_s = 0.080;  // keeps two occasions at 40 ms spacing
  win.validate(0.040);
  const Vec3 init = area_center_offset(g, 5e3, 0.0);
  TdoaSet s0 = clean;
  s0.t_s = 0.0;
  combine_window(win, s0, 0.0, init);
  TdoaSet s1 = clean;
  s1.t_s = 0.040;
  combine_window(win, s1, 0.040, init);
  EXPECT_EQ(win.occasions.size(), 2u);
  TdoaSet s2 = clean;
  s2.t_s = 0.120;
  combine_window(win, s2, 0.120, init);
  EXPECT_EQ(win.occasions.size(), 1u);  // older sets evicted

  const auto before = win.last;
  const auto out = combine_window(win, std::nullopt, 0.160, init);
  ASSERT_TRUE(out.has_value());
  EXPECT_EQ(out->pos_ecef_m, before->pos_ecef_m);  // unchanged estimate

  CombiningWindow bad;
  bad.window_s = 0.075;
  EXPECT_THROW(bad.validate(0.040), std::invalid_argument);
}

TEST(PositioningLatency, FirstOccasionAndCap) {
  auto g = make_geometry(3);
  for (auto& m : g.meas) m.occasion_index = 0;
  EXPECT_NEAR(positioning_latency(g.meas, 0.040, 0.400, 2), 0.040, 1e-12);

  // only one satellite per occasion: pairs never accumulate
  auto sparse = g.meas;
  for (size_t i = 1; i < sparse.size(); ++i) sparse[i].detected = false;
  EXPECT_NEAR(positioning_latency(sparse, 0.040, 0.400, 2), 0.400, 1e-12);

  // two sats on occasion 0 (1 pair), two more on occasion 1 -> fix at 80 ms
  std::vector<Measurement> stream;
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i) {
      Measurement m = g.meas[static_cast<size_t>(i)];
      m.occasion_index = k;
      stream.push_back(m);
    }
  EXPECT_NEAR(positioning_latency(stream, 0.040, 0.400, 2), 0.080, 1e-12);
}
