#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vwkde/core.hpp"

namespace vwkde {

enum class Scenario { OneD, Iso, NH, VMD, Mixture, PosteriorHomoscedastic };
enum class EstimatorKind { Kde, VwkdeMb, VwkdeAnalytic };
enum class SweepKind { Kl, Posterior, Lpdr };
enum class BandwidthMode { Grid, Heuristic };

const char* to_string(Scenario s);
const char* to_string(EstimatorKind e);
const char* to_string(SweepKind k);
Scenario parse_scenario(const std::string& s);
EstimatorKind parse_estimator(const std::string& s);
SweepKind parse_sweep_kind(const std::string& s);

/// Three-component mixture for the misspecified-model study. p2 is p1 rotated
/// by `rotation` radians in the first two coordinates; further coordinates
/// are standard normal in both classes.
struct MixtureSpec {
  double radius = 2.0;
  double component_variance = 1.0;
  std::vector<double> weights{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double rotation = 3.14159265358979323846 / 3.0;
  Index truth_samples = 1000000;
};

struct ExperimentConfig {
  Scenario scenario = Scenario::Iso;
  SweepKind kind = SweepKind::Kl;
  Index dim = 2;
  Index n_per_class = 2000;
  /// Extra sample sizes to sweep; empty means just n_per_class.
  std::vector<Index> n_grid;
  Index trials = 10;
  BandwidthMode bandwidth_mode = BandwidthMode::Grid;
  std::vector<double> h_grid{0.2, 0.3, 0.4, 0.5};
  /// Fraction of the pooled sample scored by the heuristic bandwidth search.
  double heuristic_fraction = 0.25;
  std::vector<EstimatorKind> estimators{EstimatorKind::Kde, EstimatorKind::VwkdeMb};
  SeedSpec seed{};

  /// NH diagonal; 0.750^2 at D=10 and 0.863^2 at D=20 when unset.
  std::optional<double> omega;
  double nh_offdiag = 0.1;
  /// VMD first-coordinate offsets of mu2.
  std::vector<double> mean_differences{0.0, 0.5, 1.0, 1.5, 2.0};
  /// PosteriorHomoscedastic first-coordinate offset of mu2.
  double posterior_offset = 2.0;
  MixtureSpec mixture{};

  std::optional<double> sigma;
  std::optional<double> lambda;
  Index max_basis = 3000;
  /// Prior ratio for posterior sweeps; N2/N1 when unset.
  std::optional<double> gamma;
  /// Free parameter of the analytic weight.
  double analytic_b = 0.0;
  Index eval_points_per_class = 1000;

  void validate() const;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& json_text);
std::string experiment_config_json(const ExperimentConfig& config);

/// One concrete data-generating pair: the VMD offsets and sample-size grid
/// each expand into their own setting.
struct ScenarioInstance {
  std::string label;
  Index n_per_class = 0;
  std::function<Dataset(Index, SeedSpec)> sample1;
  std::function<Dataset(Index, SeedSpec)> sample2;
  std::function<double(const Vector&)> log_pdf1;
  std::function<double(const Vector&)> log_pdf2;
  /// Closed-form Gaussian models when both classes are Gaussian.
  std::optional<GaussianModel> model1;
  std::optional<GaussianModel> model2;
  std::optional<double> truth;
};

std::vector<ScenarioInstance> make_scenarios(const ExperimentConfig& config);

/// NH covariance of class 2.
Matrix nh_covariance(Index dim, double omega, double offdiag);

struct TrialRow {
  std::string scenario;
  std::string estimator;
  double h = 0.0;
  Index h_index = 0;
  Index trial = 0;
  double estimate = 0.0;
  double truth = 0.0;
};

struct AggregateRow {
  std::string scenario;
  std::string estimator;
  double h = 0.0;
  Index count = 0;
  double mean = 0.0;
  /// Sample standard deviation (divisor count - 1).
  double std = 0.0;
  double bias2 = 0.0;
  /// Population variance so that bias2 + variance is the mean squared error.
  double variance = 0.0;
  double truth = 0.0;
};

struct TrialReport {
  std::string config_json;
  std::vector<TrialRow> trials;
  std::vector<AggregateRow> aggregates;
  Index failed_trials = 0;
  std::vector<std::string> failures;

  const AggregateRow* find(const std::string& estimator, double h, const std::string& scenario = {}) const;
};

/// KL of every estimator at every bandwidth for each trial. Aggregates are
/// taken against the scenario truth.
TrialReport run_kl_sweep(const ExperimentConfig& config);

/// Posterior (or LPDR) error on a fixed evaluation sample drawn from both
/// classes. The trial estimate is the mean squared error over the evaluation
/// points; aggregate bias2 and variance are the pointwise decomposition across
/// trials, averaged over points.
TrialReport run_posterior_bias_sweep(const ExperimentConfig& config);

/// Dispatches on config.kind.
TrialReport run_experiment(const ExperimentConfig& config);

void write_report(const TrialReport& report, const std::filesystem::path& path);
std::string format_report(const TrialReport& report);
TrialReport read_report(const std::filesystem::path& path);

/// Aggregates trial rows grouped by (scenario, estimator, h index) against
/// each row's truth.
std::vector<AggregateRow> aggregate_trials(const std::vector<TrialRow>& rows);

}  // namespace vwkde
