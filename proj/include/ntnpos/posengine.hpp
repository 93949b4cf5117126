#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ntnpos/constellation.hpp"
#include "ntnpos/geodesy.hpp"
#include "ntnpos/linkbudget.hpp"
#include "ntnpos/receiver.hpp"

namespace ntnpos {

struct TdoaPair {
  SatId sat_id;
  double tdoa_s = 0.0;  // toa(sat) - toa(ref), transmit slot offsets removed
  double weight = 1.0;
};

/// One occasion's TDOA measurements against a common reference satellite,
/// with satellite ECEF positions at their emission epochs (Sagnac-corrected
/// into the reception-time frame).
struct TdoaSet {
  int occasion_index = 0;
  double t_s = 0.0;  // occasion timestamp used for window eviction
  SatId ref_sat_id;
  std::vector<TdoaPair> pairs;
  std::map<SatId, Vec3> sat_positions;

  void validate() const {
    if (pairs.empty()) throw std::invalid_argument("tdoa set: needs >= 1 pair");
    if (!sat_positions.contains(ref_sat_id))
      throw std::invalid_argument("tdoa set: reference position missing");
    for (const auto& p : pairs) {
      if (!(p.weight > 0.0)) throw std::invalid_argument("tdoa set: weights must be positive");
      if (!sat_positions.contains(p.sat_id))
        throw std::invalid_argument("tdoa set: satellite position missing");
    }
  }
};

struct PositionEstimate {
  Vec3 pos_ecef_m = Vec3::Zero();
  double lat_rad = 0.0, lon_rad = 0.0, alt_m = 0.0;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
  double residual_rms_m = 0.0;
  double dop = 0.0;
  int n_measurements_used = 0;
  bool converged = false;
};

/// Build one TDOA set from an occasion's measurements: reference = detected
/// satellite with the highest SNR estimate; TDOAs are corrected for the known
/// transmit-side TDM slot offsets; weights combine the pair's SNRs
/// harmonically; satellite positions are evaluated at the emission instant and
/// rotated by the Earth rotation accumulated during the flight time.
/// Returns nothing when fewer than two satellites were detected.
inline std::optional<TdoaSet> form_tdoa(const std::vector<Measurement>& occasion,
                                        const NavMessage& nav, double window_start_s) {
  std::vector<const Measurement*> det;
  for (const auto& m : occasion)
    if (m.detected) det.push_back(&m);
  if (det.size() < 2) return std::nullopt;
  const auto* ref = *std::max_element(det.begin(), det.end(), [](const auto* a, const auto* b) {
    return a->snr_est_db < b->snr_est_db;
  });
  const auto slot_start = [&](const SatId& id) {
    for (const auto& e : nav.schedule.entries)
      if (e.sat_id == id)
        return window_start_s + (nav.schedule.slot_start_s(e) - nav.schedule.window_start_s);
    throw std::invalid_argument("form_tdoa: measurement not in schedule");
  };
  TdoaSet set;
  set.occasion_index = det.front()->occasion_index;
  set.t_s = window_start_s;
  set.ref_sat_id = ref->sat_id;
  const double t_tx_ref = slot_start(ref->sat_id);
  const double tau_ref = ref->toa_s - t_tx_ref;
  const double snr_ref = std::pow(10.0, ref->snr_est_db / 10.0);
  for (const auto* m : det) {
    const double t_tx = slot_start(m->sat_id);
    const double tau = m->toa_s - t_tx;
    // emission-time position, Sagnac-rotated into the reception frame
    const auto st = propagate(nav.ephemeris.at(m->sat_id), t_tx);
    set.sat_positions[m->sat_id] = rotate_z(st.pos_ecef_m, -kEarthRotationRate * tau);
    if (m->sat_id == ref->sat_id) continue;
    TdoaPair pair;
    pair.sat_id = m->sat_id;
    pair.tdoa_s = tau - tau_ref;
    const double snr = std::pow(10.0, m->snr_est_db / 10.0);
    pair.weight = 1.0 / (1.0 / std::max(snr, 1e-9) + 1.0 / std::max(snr_ref, 1e-9));
    set.pairs.push_back(pair);
  }
  set.validate();
  return set;
}

namespace detail {

// residual and Jacobian row of one TDOA pair at position p
inline double tdoa_residual(const Vec3& p, const Vec3& sat, const Vec3& ref, double tdoa_s,
                            Vec3* grad = nullptr) {
  const double ri = (sat - p).norm();
  const double rr = (ref - p).norm();
  if (grad) *grad = (p - sat) / ri - (p - ref) / rr;
  return kSpeedOfLight * tdoa_s - (ri - rr);
}

}  // namespace detail

/// Weighted Gauss-Newton TDOA solve. With the surface constraint the solution
/// is parametrized on the sphere of the initial guess's geocentric radius
/// (known terrain height), making 3-pair/4-satellite occasions well-posed;
/// without it the full 3D position is estimated. A prior estimate (with
/// covariance) enters as a pseudo-measurement, giving the recursive form.
inline PositionEstimate solve_wnls(const std::vector<TdoaSet>& sets,
                                   const std::optional<PositionEstimate>& prior,
                                   bool surface_constraint, const Vec3& init_pos) {
  int n_pairs = 0;
  for (const auto& s : sets) {
    s.validate();
    n_pairs += static_cast<int>(s.pairs.size());
  }
  const int needed = surface_constraint ? 2 : 3;
  if (n_pairs + (prior ? needed : 0) < needed)
    throw std::invalid_argument("solve_wnls: not enough TDOA pairs");

  Vec3 p = init_pos;
  const double radius = init_pos.norm();
  if (!(radius > 1.0)) throw std::invalid_argument("solve_wnls: bad initial position");

  PositionEstimate est;
  est.n_measurements_used = n_pairs;
  Eigen::MatrixXd jtj;
  const int max_iter = 25;
  for (int it = 0; it < max_iter; ++it) {
    const int dim = surface_constraint ? 2 : 3;
    // local parametrization: ENU tangent basis on the constraint sphere
    Eigen::Matrix<double, 3, Eigen::Dynamic> basis(3, dim);
    if (surface_constraint) {
      double lat, lon, alt;
      ecef_to_geodetic(p, lat, lon, alt);
      const EnuFrame f = enu_frame(lat, lon);
      basis.col(0) = f.east;
      basis.col(1) = f.north;
    } else {
      basis = Eigen::Matrix3d::Identity();
    }
    jtj = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd jtr = Eigen::VectorXd::Zero(dim);
    double wsum = 0.0, wr2 = 0.0;
    for (const auto& s : sets) {
      const Vec3& ref = s.sat_positions.at(s.ref_sat_id);
      for (const auto& pr : s.pairs) {
        Vec3 g;
        const double r = detail::tdoa_residual(p, s.sat_positions.at(pr.sat_id), ref, pr.tdoa_s, &g);
        const Eigen::VectorXd row = basis.transpose() * g;
        jtj += pr.weight * row * row.transpose();
        // d r / d delta = -row^T, so the Gauss-Newton right side is +w*row*r
        jtr += pr.weight * row * r;
        wsum += pr.weight;
        wr2 += pr.weight * r * r;
      }
    }
    if (prior && prior->converged) {
      // prior pseudo-measurement: information = inverse covariance projected
      // onto the current parametrization
      const Eigen::Matrix3d info = prior->covariance.inverse();
      const Eigen::MatrixXd ip = basis.transpose() * info * basis;
      jtj += ip;
      jtr += basis.transpose() * info * (prior->pos_ecef_m - p);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
    if (lu.rank() < dim)
      throw std::runtime_error("solve_wnls: singular geometry (rank-deficient normal equations)");
    const Eigen::VectorXd step = lu.solve(jtr);
    p += basis * step;
    if (surface_constraint) p *= radius / p.norm();
    est.residual_rms_m = std::sqrt(wr2 / std::max(wsum, 1e-300));
    if (step.norm() < 1e-6) {
      est.converged = true;
      break;
    }
  }
  est.pos_ecef_m = p;
  ecef_to_geodetic(p, est.lat_rad, est.lon_rad, est.alt_m);
  est.dop = std::sqrt(jtj.inverse().trace());
  // expand the local-parameter covariance back to ECEF
  {
    const int dim = surface_constraint ? 2 : 3;
    Eigen::Matrix<double, 3, Eigen::Dynamic> basis(3, dim);
    if (surface_constraint) {
      const EnuFrame f = enu_frame(est.lat_rad, est.lon_rad);
      basis.col(0) = f.east;
      basis.col(1) = f.north;
    } else {
      basis = Eigen::Matrix3d::Identity();
    }
    est.covariance = basis * jtj.inverse() * basis.transpose();
  }
  return est;
}

/// Geometric dilution of precision for a TDOA set evaluated at a position:
/// sqrt(trace((J^T W J)^-1)) over the (constrained) position block.
inline double gdop(const TdoaSet& set, const Vec3& ue_pos, bool surface_constraint = true) {
  set.validate();
  if (set.pairs.size() < 2) throw std::invalid_argument("gdop: needs >= 2 pairs");
  const int dim = surface_constraint ? 3 - 1 : 3;
  Eigen::Matrix<double, 3, Eigen::Dynamic> basis(3, dim);
  if (surface_constraint) {
    double lat, lon, alt;
    ecef_to_geodetic(ue_pos, lat, lon, alt);
    const EnuFrame f = enu_frame(lat, lon);
    basis.col(0) = f.east;
    basis.col(1) = f.north;
  } else {
    basis = Eigen::Matrix3d::Identity();
  }
  Eigen::MatrixXd jtj = Eigen::MatrixXd::Zero(dim, dim);
  const Vec3& ref = set.sat_positions.at(set.ref_sat_id);
  for (const auto& pr : set.pairs) {
    Vec3 g;
    detail::tdoa_residual(ue_pos, set.sat_positions.at(pr.sat_id), ref, pr.tdoa_s, &g);
    const Eigen::VectorXd row = basis.transpose() * g;
    jtj += pr.weight * row * row.transpose();
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
  if (lu.rank() < dim) throw std::runtime_error("gdop: singular geometry");
  return std::sqrt(jtj.inverse().trace());
}

/// Sliding measurement-combining window: retains the TDOA sets of the last
/// window_s seconds and re-solves the batch on every update. The previous
/// estimate warm-starts the iteration; `prior` is optional *external*
/// information (e.g. a coarse area fix) — the window's own past solutions are
/// never fed back as pseudo-measurements, since the retained sets already
/// carry that information.
struct CombiningWindow {
  double window_s = 0.400;
  std::deque<TdoaSet> occasions;
  std::optional<PositionEstimate> prior;  // external prior only
  std::optional<PositionEstimate> last;   // most recent solution (bookkeeping)
  bool surface_constraint = true;

  void validate(double periodicity_s) const {
    const double ratio = window_s / periodicity_s;
    if (std::abs(ratio - std::lround(ratio)) > 1e-9)
      throw std::invalid_argument("combining window: must be an integer multiple of the periodicity");
  }
};

/// Append a new occasion's set (if any), evict sets older than the window, and
/// re-solve with all retained sets (plus the external prior, if set). An empty
/// incoming set only advances the bookkeeping.
inline std::optional<PositionEstimate> combine_window(CombiningWindow& window,
                                                      const std::optional<TdoaSet>& new_set,
                                                      double now_s, const Vec3& init_pos) {
  if (new_set) window.occasions.push_back(*new_set);
  while (!window.occasions.empty() && window.occasions.front().t_s < now_s - window.window_s + 1e-9)
    window.occasions.pop_front();
  if (!new_set) return window.last;
  int n_pairs = 0;
  for (const auto& s : window.occasions) n_pairs += static_cast<int>(s.pairs.size());
  const int needed = window.surface_constraint ? 2 : 3;
  if (n_pairs + (window.prior && window.prior->converged ? needed : 0) < needed)
    return window.last;
  const std::vector<TdoaSet> sets(window.occasions.begin(), window.occasions.end());
  const Vec3 start = window.last && window.last->converged ? window.last->pos_ecef_m : init_pos;
  window.last = solve_wnls(sets, window.prior, window.surface_constraint, start);
  return window.last;
}

/// Time until enough TDOA pairs accumulate for a first position solve, capped
/// at the search window ("time to first fix" latency at the measurement
/// level). Measurements must carry occasion indices from multi_occasion_search.
inline double positioning_latency(const std::vector<Measurement>& all, double periodicity_s,
                                  double window_s, int min_pairs = 2) {
  int max_occ = 0;
  for (const auto& m : all) max_occ = std::max(max_occ, m.occasion_index);
  int pairs = 0;
  for (int k = 0; k <= max_occ; ++k) {
    int det = 0;
    for (const auto& m : all)
      if (m.occasion_index == k && m.detected) ++det;
    if (det >= 2) pairs += det - 1;
    if (pairs >= min_pairs) return (k + 1) * periodicity_s;
  }
  return window_s;
}

}  // namespace ntnpos
