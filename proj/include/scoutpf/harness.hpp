#pragma once

// Monte Carlo campaign runner: repeated filter runs over a scenario with
// derived per-run seeds, error/consistency metrics, and file emission.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scoutpf/filters.hpp"
#include "scoutpf/scenarios.hpp"

namespace scoutpf::harness {

struct FilterSetup {
  std::string name;
  filters::FilterConfig config;
};

struct CampaignSpec {
  scenarios::ScenarioSpec scenario;
  std::vector<FilterSetup> filters;
  int n_mc = 1;
  std::uint64_t base_seed = 0;
  int workers = 0;  // 0: use SCOUTPF_WORKERS or the hardware count
};

struct StepRecord {
  int step = 0;
  double time = 0.0;
  Eigen::VectorXd estimate;
  Eigen::VectorXd cov_diag;
  Eigen::VectorXd error;  // estimate - truth reference
  double n_eff = 0.0;
  double psi = 0.0;
  filters::UpdateKind update_kind = filters::UpdateKind::Gpf;
};

struct RunRecord {
  int run_id = 0;
  std::uint64_t seed = 0;
  std::string status = "ok";  // or the failure message
  bool failed = false;
  std::vector<StepRecord> steps;
};

/// Per-step aggregates over the successful runs of one filter.
struct StepAggregate {
  int step = 0;
  double time = 0.0;
  int runs_ok = 0;
  double rmse = 0.0;
  double mean_psi = 0.0;
  Eigen::VectorXd mean_error;
  Eigen::VectorXd sigma_eff;  // per-axis error spread across runs
  Eigen::VectorXd sigma_est;  // per-axis mean reported standard deviation
  int scout_updates = 0;      // update-selection histogram
};

struct FilterResult {
  std::string name;
  filters::FilterConfig config;
  int runs_failed = 0;
  double overall_rmse = 0.0;  // final-step RMSE
  double mean_psi = 0.0;      // across steps and runs
  std::vector<StepAggregate> steps;
  std::vector<RunRecord> runs;
};

struct CampaignResult {
  CampaignSpec spec;
  Eigen::VectorXd static_reference;  // posterior mean for fixed-observation scenarios
  std::vector<FilterResult> filters;
  double wall_seconds = 0.0;  // not written to result files
};

/// Seed of one Monte Carlo run, derived order-free from the base seed.
std::uint64_t run_seed(std::uint64_t base_seed, int run_id);

/// Executes n_mc independent runs per filter and aggregates the metrics.
/// Per-run failures are recorded, not fatal.
CampaignResult run_campaign(const CampaignSpec& spec);

/// One run of one filter, fully reproducible from its seed.
RunRecord run_single(const scenarios::ScenarioSpec& scenario, const FilterSetup& filter,
                     std::uint64_t seed, const Eigen::VectorXd* static_reference);

/// Writes summary.json / per_step.csv / per_run.csv under out_dir.
/// format: "json", "csv", or "both". Returns the paths written.
std::vector<std::string> emit_results(const CampaignResult& result, const std::string& out_dir,
                                      const std::string& format);

std::string summary_json(const CampaignResult& result, int indent = 2);

}  //  namespace scoutpf::harness
