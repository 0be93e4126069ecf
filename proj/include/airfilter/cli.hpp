#pragma once

// Command-line surface: run configuration, subcommands and exit codes.

#include "airfilter/bayes_filter.hpp"
#include "airfilter/covariance.hpp"
#include "airfilter/geo.hpp"
#include "airfilter/sim_bench.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace airfilter {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Thrown for invalid flags or configuration; maps to kExitUsage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string network;
  std::string observations;
  std::string model;
  std::string grid;
  std::string truth;
  std::string predictions;      // metrics: calibrated CSV to score
  std::string output;           // empty: <output_dir>/<default name>, or stdout
  std::string output_dir;
  std::string pvalues;          // calibrate with gpfilter-bayes: p-value CSV
  std::string predictions_out;  // simulate: per-site predictions CSV

  KernelFamily family = KernelFamily::Exponential;
  bool nugget = false;
  bool fix_phi = false;
  Method method = Method::GpFreq;
  std::vector<std::string> covariates;  // empty: every covariate column
  std::optional<TimeWindow> window;
  McmcConfig mcmc;
  std::uint64_t seed = 0;
  double threshold = 12.0;
  unsigned threads = 1;

  Scenario scenario = Scenario::S1a;
  Profile profile = Profile::Desk;
  std::optional<double> sigma2;
  std::optional<double> gamma;
  std::optional<std::size_t> replicates;
  std::vector<Method> methods;  // empty: all but gpfilter-bayes
  bool include_runtime = false;

  std::string field = "lowcost";  // variogram values: lowcost, reference, calibrated
  std::size_t bins = 10;
  std::optional<TimeIndex> t;

  /// Throws UsageError.
  void validate() const;
};

/// "t0:t1" (half-open). Throws UsageError.
TimeWindow parse_window(const std::string& text);

/// Applies a JSON RunConfig on top of `base`. Unknown keys are rejected.
/// Throws UsageError.
RunConfig apply_config_json(const std::string& text, RunConfig base);

/// AIRFILTER_THREADS and AIRFILTER_SEED.
void apply_environment(RunConfig& config);

/// Runs one subcommand. Results go to the configured output (or `out`),
/// diagnostics to `err`. Returns an ExitCode.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace airfilter
