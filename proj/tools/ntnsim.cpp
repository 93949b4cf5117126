// Command-line front end: loads a scenario file, runs the requested
// Monte-Carlo campaign, and writes plot-ready CDF/statistics CSVs.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ntnpos/simulation.hpp"

namespace {

struct CommonOpts {
  std::string scenario_path;
  std::string out_dir = ".";
  int64_t seed = -1;
  int drops = -1;
  int workers = 1;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool scenario_required = true) {
  auto* s = cmd->add_option("--scenario", o.scenario_path, "scenario config file");
  if (scenario_required) s->required();
  cmd->add_option("--seed", o.seed, "override [drops] master_seed");
  cmd->add_option("--drops", o.drops, "override [drops] count");
  cmd->add_option("--out-dir", o.out_dir, "output directory for CSV tables");
  cmd->add_option("--workers", o.workers, "worker threads for the drop loop");
}

ntnpos::Scenario load(const CommonOpts& o) {
  ntnpos::Scenario sc = ntnpos::load_scenario(o.scenario_path);
  if (o.seed >= 0) sc.master_seed = static_cast<uint64_t>(o.seed);
  if (o.drops > 0) sc.drops = o.drops;
  sc.validate();
  return sc;
}

int run_metrics(const CommonOpts& o, const std::vector<std::string>& metrics) {
  const ntnpos::Scenario sc = load(o);
  std::filesystem::create_directories(o.out_dir);
  const auto tables = ntnpos::run_scenario(sc, metrics, o.workers);
  for (const auto& t : tables) {
    const std::string path = o.out_dir + "/" + t.metric + ".csv";
    ntnpos::emit_cdf(t, path);
    std::cout << t.metric << " -> " << path;
    if (t.metric != "pd_vs_snr" && !t.rows.empty())
      std::cout << "  (median " << ntnpos::table_quantile(t, 0.5) << " " << t.x_unit << ")";
    std::cout << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LEO downlink positioning simulator"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string metric;
  std::string cmp_a, cmp_b;
  double percentile = 0.5;

  auto* visibility = app.add_subcommand("visibility", "visible-satellite-count CDF");
  add_common(visibility, o);

  auto* pd = app.add_subcommand("pd-sweep", "detection probability vs SNR (AWGN)");
  add_common(pd, o);

  auto* toa = app.add_subcommand("toa-cdf", "TOA error CDF over UE drops");
  add_common(toa, o);

  auto* lat = app.add_subcommand("latency-cdf", "acquisition/positioning latency CDFs");
  add_common(lat, o);
  lat->add_option("--metric", metric, "restrict to toa_latency or pos_latency (default: both)");

  auto* pos = app.add_subcommand("position-cdf", "positioning error CDF over UE drops");
  add_common(pos, o);
  pos->add_option("--metric", metric,
                  "restrict to pos_error or pos_error_single (default: both)");

  auto* cmp = app.add_subcommand("compare", "relative improvement between two emitted tables");
  cmp->add_option("table_a", cmp_a, "baseline CSV")->required();
  cmp->add_option("table_b", cmp_b, "comparison CSV")->required();
  cmp->add_option("--percentile", percentile, "quantile to compare (default median)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (visibility->parsed()) return run_metrics(o, {"visible_count"});
    if (pd->parsed()) return run_metrics(o, {"pd_vs_snr"});
    if (toa->parsed()) return run_metrics(o, {"toa_error"});
    if (lat->parsed()) {
      if (metric.empty()) return run_metrics(o, {"toa_latency", "pos_latency"});
      return run_metrics(o, {metric});
    }
    if (pos->parsed()) {
      if (metric.empty()) return run_metrics(o, {"pos_error", "pos_error_single"});
      return run_metrics(o, {metric});
    }
    if (cmp->parsed()) {
      const auto a = ntnpos::read_cdf(cmp_a);
      const auto b = ntnpos::read_cdf(cmp_b);
      const double imp = ntnpos::compare_runs(a, b, percentile);
      std::cout << "improvement at p" << 100.0 * percentile << " = " << 100.0 * imp << "%\n";
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
