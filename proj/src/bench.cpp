#include "vwkde/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <tuple>

#include "json.hpp"

#include "vwkde/estimators.hpp"
#include "vwkde/io.hpp"
#include "vwkde/kde.hpp"
#include "vwkde/parallel.hpp"
#include "vwkde/weight.hpp"

namespace vwkde {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <typename E>
struct Names {
  E value;
  const char* name;
};

constexpr Names<Scenario> kScenarioNames[] = {
    {Scenario::OneD, "OneD"},   {Scenario::Iso, "Iso"},         {Scenario::NH, "NH"},
    {Scenario::VMD, "VMD"},     {Scenario::Mixture, "Mixture"}, {Scenario::PosteriorHomoscedastic, "PosteriorHomoscedastic"},
};
constexpr Names<EstimatorKind> kEstimatorNames[] = {
    {EstimatorKind::Kde, "kde"}, {EstimatorKind::VwkdeMb, "vwkde-mb"}, {EstimatorKind::VwkdeAnalytic, "vwkde-analytic"}};
constexpr Names<SweepKind> kSweepNames[] = {
    {SweepKind::Kl, "kl"}, {SweepKind::Posterior, "posterior"}, {SweepKind::Lpdr, "lpdr"}};

template <typename E, std::size_t N>
const char* name_of(const Names<E> (&table)[N], E v) {
  for (const auto& t : table)
    if (t.value == v) return t.name;
  return "?";
}

template <typename E, std::size_t N>
E parse_name(const Names<E> (&table)[N], const std::string& s, const char* what) {
  for (const auto& t : table)
    if (s == t.name) return t.value;
  std::string known;
  for (const auto& t : table) known += std::string(known.empty() ? "" : ", ") + t.name;
  throw Error(ErrorCode::InvalidConfig, std::string("unknown ") + what + " '" + s + "' (expected one of " + known + ")");
}

}  // namespace

const char* to_string(Scenario s) { return name_of(kScenarioNames, s); }
const char* to_string(EstimatorKind e) { return name_of(kEstimatorNames, e); }
const char* to_string(SweepKind k) { return name_of(kSweepNames, k); }
Scenario parse_scenario(const std::string& s) { return parse_name(kScenarioNames, s, "scenario"); }
EstimatorKind parse_estimator(const std::string& s) { return parse_name(kEstimatorNames, s, "estimator"); }
SweepKind parse_sweep_kind(const std::string& s) { return parse_name(kSweepNames, s, "sweep kind"); }

// ---------------------------------------------------------------- config

namespace {

double default_omega(Index dim) {
  if (dim == 10) return 0.750 * 0.750;
  if (dim == 20) return 0.863 * 0.863;
  throw Error(ErrorCode::InvalidConfig, "NH scenario needs an explicit omega for D=" + std::to_string(dim));
}

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (trials < 1) fail("trials must be >= 1");
  if (dim < 1) fail("D must be >= 1");
  if (n_per_class < 2) fail("n_per_class must be >= 2");
  for (Index n : n_grid)
    if (n < 2) fail("n_grid entries must be >= 2");
  if (estimators.empty()) fail("estimator set is empty");
  if (bandwidth_mode == BandwidthMode::Grid && h_grid.empty()) fail("h_grid is empty");
  for (double h : h_grid)
    if (!(h > 0.0) || !std::isfinite(h)) fail("h_grid entries must be positive");
  if (!(heuristic_fraction > 0.0 && heuristic_fraction <= 1.0)) fail("heuristic_fraction must lie in (0, 1]");
  if (sigma && !(*sigma > 0.0)) fail("sigma must be positive");
  if (lambda && !(*lambda > 0.0)) fail("lambda must be positive");
  if (max_basis < 1) fail("max_basis must be >= 1");
  if (gamma && !(*gamma > 0.0)) fail("gamma must be positive");
  if (eval_points_per_class < 1) fail("eval_points_per_class must be >= 1");
  switch (scenario) {
    case Scenario::OneD:
      if (dim != 1) fail("OneD scenario requires D=1");
      break;
    case Scenario::NH:
      if (dim < 2) fail("NH scenario requires D >= 2");
      if (omega ? !(*omega > 0.0) : (default_omega(dim), false)) fail("omega must be positive");
      break;
    case Scenario::VMD:
      if (mean_differences.empty()) fail("VMD scenario needs mean_differences");
      break;
    case Scenario::Mixture:
      if (dim < 2) fail("Mixture scenario requires D >= 2");
      if (mixture.weights.size() != 3) fail("Mixture scenario needs exactly 3 weights");
      if (!(mixture.radius >= 0.0) || !(mixture.component_variance > 0.0)) fail("bad mixture geometry");
      if (mixture.truth_samples < 2) fail("mixture truth_samples must be >= 2");
      break;
    default:
      break;
  }
}

namespace {

template <typename T>
T get_field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config field '") + key + "': " + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<const char*> keys, const char* where) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, std::string(where) + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw Error(ErrorCode::InvalidConfig, std::string("unknown field '") + k + "' in " + where);
  }
}

}  // namespace

// Optional numeric fields also accept null or the descriptive default string
// that experiment_config_json writes, so report headers parse back.
ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, std::string("experiment config: ") + e.what());
  }
  check_keys(j,
             {"scenario", "kind", "D", "n_per_class", "n_grid", "trials", "bandwidth", "h_grid",
              "heuristic_fraction", "estimators", "seed", "omega", "nh_offdiag", "mean_differences",
              "posterior_offset", "mixture", "sigma", "lambda", "max_basis", "gamma", "b",
              "eval_points_per_class"},
             "experiment config");
  ExperimentConfig c;
  if (!j.contains("scenario")) throw Error(ErrorCode::InvalidConfig, "experiment config needs 'scenario'");
  c.scenario = parse_scenario(get_field<std::string>(j, "scenario"));
  if (c.scenario == Scenario::OneD) c.dim = 1;
  if (c.scenario == Scenario::PosteriorHomoscedastic) {
    c.kind = SweepKind::Posterior;
    c.estimators = {EstimatorKind::Kde, EstimatorKind::VwkdeAnalytic};
  }
  if (j.contains("kind")) c.kind = parse_sweep_kind(get_field<std::string>(j, "kind"));
  if (j.contains("D")) c.dim = get_field<Index>(j, "D");
  if (j.contains("n_per_class")) c.n_per_class = get_field<Index>(j, "n_per_class");
  if (j.contains("n_grid")) c.n_grid = get_field<std::vector<Index>>(j, "n_grid");
  if (j.contains("trials")) c.trials = get_field<Index>(j, "trials");
  if (j.contains("bandwidth")) {
    const auto mode = get_field<std::string>(j, "bandwidth");
    if (mode == "grid") c.bandwidth_mode = BandwidthMode::Grid;
    else if (mode == "heuristic") c.bandwidth_mode = BandwidthMode::Heuristic;
    else throw Error(ErrorCode::InvalidConfig, "bandwidth must be 'grid' or 'heuristic'");
  }
  if (j.contains("h_grid")) c.h_grid = get_field<std::vector<double>>(j, "h_grid");
  if (j.contains("heuristic_fraction")) c.heuristic_fraction = get_field<double>(j, "heuristic_fraction");
  if (j.contains("estimators")) {
    c.estimators.clear();
    for (const auto& s : get_field<std::vector<std::string>>(j, "estimators")) c.estimators.push_back(parse_estimator(s));
  }
  if (j.contains("seed")) c.seed.master = get_field<std::uint64_t>(j, "seed");
  if (j.contains("omega") && !j["omega"].is_string() && !j["omega"].is_null()) c.omega = get_field<double>(j, "omega");
  if (j.contains("nh_offdiag")) c.nh_offdiag = get_field<double>(j, "nh_offdiag");
  if (j.contains("mean_differences")) c.mean_differences = get_field<std::vector<double>>(j, "mean_differences");
  if (j.contains("posterior_offset")) c.posterior_offset = get_field<double>(j, "posterior_offset");
  if (j.contains("mixture")) {
    const json& m = j.at("mixture");
    check_keys(m, {"radius", "component_variance", "weights", "rotation", "truth_samples"}, "mixture");
    if (m.contains("radius")) c.mixture.radius = get_field<double>(m, "radius");
    if (m.contains("component_variance")) c.mixture.component_variance = get_field<double>(m, "component_variance");
    if (m.contains("weights")) c.mixture.weights = get_field<std::vector<double>>(m, "weights");
    if (m.contains("rotation")) c.mixture.rotation = get_field<double>(m, "rotation");
    if (m.contains("truth_samples")) c.mixture.truth_samples = get_field<Index>(m, "truth_samples");
  }
  if (j.contains("sigma") && !j["sigma"].is_string() && !j["sigma"].is_null()) c.sigma = get_field<double>(j, "sigma");
  if (j.contains("lambda") && !j["lambda"].is_string() && !j["lambda"].is_null()) c.lambda = get_field<double>(j, "lambda");
  if (j.contains("max_basis")) c.max_basis = get_field<Index>(j, "max_basis");
  if (j.contains("gamma") && !j["gamma"].is_string() && !j["gamma"].is_null()) c.gamma = get_field<double>(j, "gamma");
  if (j.contains("b")) c.analytic_b = get_field<double>(j, "b");
  if (j.contains("eval_points_per_class")) c.eval_points_per_class = get_field<Index>(j, "eval_points_per_class");
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_experiment_config(ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

std::string experiment_config_json(const ExperimentConfig& c) {
  json j;
  j["scenario"] = to_string(c.scenario);
  j["kind"] = to_string(c.kind);
  j["D"] = c.dim;
  j["n_per_class"] = c.n_per_class;
  j["n_grid"] = c.n_grid;
  j["trials"] = c.trials;
  j["bandwidth"] = c.bandwidth_mode == BandwidthMode::Grid ? "grid" : "heuristic";
  j["h_grid"] = c.h_grid;
  j["heuristic_fraction"] = c.heuristic_fraction;
  std::vector<std::string> est;
  for (auto e : c.estimators) est.emplace_back(to_string(e));
  j["estimators"] = est;
  j["seed"] = c.seed.master;
  j["omega"] = c.omega ? json(*c.omega) : json(nullptr);
  j["nh_offdiag"] = c.nh_offdiag;
  j["mean_differences"] = c.mean_differences;
  j["posterior_offset"] = c.posterior_offset;
  j["mixture"] = {{"radius", c.mixture.radius},
                  {"component_variance", c.mixture.component_variance},
                  {"weights", c.mixture.weights},
                  {"rotation", c.mixture.rotation},
                  {"truth_samples", c.mixture.truth_samples}};
  j["sigma"] = c.sigma ? json(*c.sigma) : json("median-heuristic");
  j["lambda"] = c.lambda ? json(*c.lambda) : json("1e-3*N");
  j["max_basis"] = c.max_basis;
  j["gamma"] = c.gamma ? json(*c.gamma) : json("N2/N1");
  j["b"] = c.analytic_b;
  j["eval_points_per_class"] = c.eval_points_per_class;
  return j.dump();
}

// ---------------------------------------------------------------- scenarios

Matrix nh_covariance(Index dim, double omega, double offdiag) {
  Matrix s = Matrix::Identity(dim, dim) * omega;
  if (dim >= 2) s(0, 1) = s(1, 0) = offdiag;
  return s;
}

namespace {

ScenarioInstance gaussian_instance(std::string label, Index n, GaussianModel m1, GaussianModel m2,
                                   std::optional<double> truth = std::nullopt) {
  ScenarioInstance s;
  s.label = std::move(label);
  s.n_per_class = n;
  s.truth = truth ? *truth : gaussian_kl_closed_form(m1, m2);
  s.sample1 = [m1](Index k, SeedSpec seed) { return sample_gaussian(m1, k, seed); };
  s.sample2 = [m2](Index k, SeedSpec seed) { return sample_gaussian(m2, k, seed); };
  s.log_pdf1 = [m1](const Vector& x) { return m1.log_pdf(x); };
  s.log_pdf2 = [m2](const Vector& x) { return m2.log_pdf(x); };
  s.model1 = std::move(m1);
  s.model2 = std::move(m2);
  return s;
}

std::vector<MixtureComponent> mixture_components(const MixtureSpec& spec, Index dim, double rotation) {
  std::vector<MixtureComponent> out;
  for (int k = 0; k < 3; ++k) {
    const double angle = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * k / 3.0 + rotation;
    Vector mean = Vector::Zero(dim);
    mean(0) = spec.radius * std::cos(angle);
    mean(1) = spec.radius * std::sin(angle);
    out.push_back({spec.weights[static_cast<std::size_t>(k)],
                   GaussianModel(mean, Matrix::Identity(dim, dim) * spec.component_variance)});
  }
  return out;
}

double monte_carlo_kl(const std::vector<MixtureComponent>& c1, const std::vector<MixtureComponent>& c2, Index n,
                      SeedSpec seed) {
  constexpr Index kChunk = 50000;
  const Index chunks = (n + kChunk - 1) / kChunk;
  std::vector<double> sums(static_cast<std::size_t>(chunks));
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t c) {
    const Index lo = static_cast<Index>(c) * kChunk;
    const Index count = std::min(kChunk, n - lo);
    const Dataset x = sample_mixture(c1, count, seed.derive(c));
    double s = 0.0;
    for (Index i = 0; i < count; ++i) {
      const Vector xi = x.row(i);
      s += mixture_log_pdf(c1, xi) - mixture_log_pdf(c2, xi);
    }
    sums[c] = s;
  });
  double total = 0.0;
  for (double s : sums) total += s;
  return total / static_cast<double>(n);
}

std::string setting_label(const ExperimentConfig& c, std::optional<double> dmu, Index n, bool show_n) {
  std::string label = to_string(c.scenario);
  std::string params;
  if (dmu) params += "dmu=" + format_double(*dmu);
  if (show_n) params += std::string(params.empty() ? "" : ";") + "n=" + std::to_string(n);
  if (!params.empty()) label += "[" + params + "]";
  return label;
}

}  // namespace

std::vector<ScenarioInstance> make_scenarios(const ExperimentConfig& c) {
  c.validate();
  const Index d = c.dim;
  std::vector<Index> sizes = c.n_grid.empty() ? std::vector<Index>{c.n_per_class} : c.n_grid;
  const bool show_n = sizes.size() > 1;
  std::vector<ScenarioInstance> out;
  const Matrix eye = Matrix::Identity(d, d);
  for (Index n : sizes) {
    switch (c.scenario) {
      case Scenario::OneD:
        out.push_back(gaussian_instance(setting_label(c, std::nullopt, n, show_n), n,
                                        GaussianModel(Vector::Constant(1, 0.0), Matrix::Constant(1, 1, 1.1 * 1.1)),
                                        GaussianModel(Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 0.9 * 0.9))));
        break;
      case Scenario::Iso: {
        Vector mu2 = Vector::Zero(d);
        mu2(0) = std::sqrt(2.0);
        out.push_back(gaussian_instance(setting_label(c, std::nullopt, n, show_n), n,
                                        GaussianModel(Vector::Zero(d), eye), GaussianModel(mu2, eye)));
        break;
      }
      case Scenario::NH: {
        const double omega = c.omega ? *c.omega : default_omega(d);
        try {
          out.push_back(gaussian_instance(setting_label(c, std::nullopt, n, show_n), n,
                                          GaussianModel(Vector::Zero(d), eye),
                                          GaussianModel(Vector::Zero(d), nh_covariance(d, omega, c.nh_offdiag))));
        } catch (const Error& e) {
          throw Error(ErrorCode::InvalidConfig, std::string("NH covariance: ") + e.what());
        }
        break;
      }
      case Scenario::VMD:
        for (double dmu : c.mean_differences) {
          Vector mu2 = Vector::Zero(d);
          mu2(0) = dmu;
          out.push_back(gaussian_instance(setting_label(c, dmu, n, show_n), n, GaussianModel(Vector::Zero(d), eye),
                                          GaussianModel(mu2, eye), 0.5 * dmu * dmu));
        }
        break;
      case Scenario::PosteriorHomoscedastic: {
        Vector mu2 = Vector::Zero(d);
        mu2(0) = c.posterior_offset;
        out.push_back(gaussian_instance(setting_label(c, std::nullopt, n, show_n), n,
                                        GaussianModel(Vector::Zero(d), eye), GaussianModel(mu2, eye)));
        break;
      }
      case Scenario::Mixture: {
        auto c1 = mixture_components(c.mixture, d, 0.0);
        auto c2 = mixture_components(c.mixture, d, c.mixture.rotation);
        ScenarioInstance s;
        s.label = setting_label(c, std::nullopt, n, show_n);
        s.n_per_class = n;
        s.sample1 = [c1](Index k, SeedSpec seed) { return sample_mixture(c1, k, seed); };
        s.sample2 = [c2](Index k, SeedSpec seed) { return sample_mixture(c2, k, seed); };
        s.log_pdf1 = [c1](const Vector& x) { return mixture_log_pdf(c1, x); };
        s.log_pdf2 = [c2](const Vector& x) { return mixture_log_pdf(c2, x); };
        if (out.empty()) {
          s.truth = monte_carlo_kl(c1, c2, c.mixture.truth_samples, c.seed.derive(0x7275746bULL));
        } else {
          s.truth = out.front().truth;
        }
        out.push_back(std::move(s));
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- sweeps

namespace {

/// Seed streams per trial: 0 and 1 draw the samples, 2 drives the weight fit,
/// 3 the bandwidth subsample.
SeedSpec trial_seed(const ExperimentConfig& c, std::size_t setting, Index trial) {
  return c.seed.derive(setting + 1).derive(static_cast<std::uint64_t>(trial));
}

bool is_recoverable(ErrorCode code) {
  return code == ErrorCode::NumericFailure || code == ErrorCode::DegenerateModel ||
         code == ErrorCode::DegenerateDirection || code == ErrorCode::UndefinedPosterior;
}

std::vector<double> trial_bandwidths(const ExperimentConfig& c, const Dataset& d1, const Dataset& d2,
                                     SeedSpec seed) {
  if (c.bandwidth_mode == BandwidthMode::Grid) return c.h_grid;
  const Dataset pooled = Dataset::concat(d1, d2);
  const auto grid = default_bandwidth_grid(pooled);
  return {select_bandwidth(pooled, grid, c.heuristic_fraction, seed)};
}

std::shared_ptr<const AlphaFunction> make_alpha(const ExperimentConfig& c, EstimatorKind e, const Dataset& d1,
                                                const Dataset& d2, SeedSpec seed) {
  switch (e) {
    case EstimatorKind::Kde:
      return std::make_shared<ConstantAlpha>();
    case EstimatorKind::VwkdeMb: {
      RkhsFitOptions opt;
      opt.sigma = c.sigma;
      opt.lambda = c.lambda;
      opt.max_basis = c.max_basis;
      opt.seed = seed;
      return std::make_shared<RkhsLogAlpha>(fit_model_based_alpha(d1, d2, opt).alpha);
    }
    case EstimatorKind::VwkdeAnalytic: {
      const Vector mu1 = d1.points().colwise().mean().transpose();
      const Vector mu2 = d2.points().colwise().mean().transpose();
      return std::make_shared<AnalyticHomoscedasticAlpha>(
          analytic_alpha(mu1, mu2, pooled_covariance(d1, d2), c.analytic_b));
    }
  }
  throw Error(ErrorCode::InvalidConfig, "unknown estimator");
}

struct TrialOutcome {
  std::vector<TrialRow> rows;
  std::string failure;
};

void collect(TrialReport& report, std::vector<TrialOutcome>& outcomes, const std::string& label) {
  for (Index t = 0; t < static_cast<Index>(outcomes.size()); ++t) {
    auto& o = outcomes[static_cast<std::size_t>(t)];
    if (!o.failure.empty()) {
      ++report.failed_trials;
      report.failures.push_back(label + " trial " + std::to_string(t) + ": " + o.failure);
      continue;
    }
    for (auto& r : o.rows) report.trials.push_back(std::move(r));
  }
}

}  // namespace

TrialReport run_kl_sweep(const ExperimentConfig& c) {
  const auto settings = make_scenarios(c);
  TrialReport report;
  report.config_json = experiment_config_json(c);
  for (std::size_t s = 0; s < settings.size(); ++s) {
    const ScenarioInstance& sc = settings[s];
    std::vector<TrialOutcome> outcomes(static_cast<std::size_t>(c.trials));
    parallel_for(outcomes.size(), [&](std::size_t t) {
      const SeedSpec seed = trial_seed(c, s, static_cast<Index>(t));
      auto& out = outcomes[t];
      try {
        const Dataset d1 = sc.sample1(sc.n_per_class, seed.derive(0));
        const Dataset d2 = sc.sample2(sc.n_per_class, seed.derive(1));
        const auto hs = trial_bandwidths(c, d1, d2, seed.derive(3));
        for (EstimatorKind e : c.estimators) {
          const auto alpha = make_alpha(c, e, d1, d2, seed.derive(2));
          const auto kl = kl_estimate_grid(d1, d2, *alpha, hs);
          for (std::size_t g = 0; g < hs.size(); ++g) {
            if (!std::isfinite(kl[g].value)) throw Error(ErrorCode::NumericFailure, "KL estimate is not finite");
            out.rows.push_back({sc.label, to_string(e), hs[g], static_cast<Index>(g), static_cast<Index>(t),
                                kl[g].value, sc.truth.value_or(kNaN)});
          }
        }
      } catch (const Error& err) {
        if (!is_recoverable(err.code())) throw;
        out.rows.clear();
        out.failure = err.what();
      }
    });
    collect(report, outcomes, sc.label);
  }
  report.aggregates = aggregate_trials(report.trials);
  return report;
}

TrialReport run_posterior_bias_sweep(const ExperimentConfig& c) {
  if (c.kind == SweepKind::Kl) throw Error(ErrorCode::InvalidConfig, "posterior sweep needs kind posterior or lpdr");
  const bool lpdr = c.kind == SweepKind::Lpdr;
  const auto settings = make_scenarios(c);
  TrialReport report;
  report.config_json = experiment_config_json(c);
  for (std::size_t s = 0; s < settings.size(); ++s) {
    const ScenarioInstance& sc = settings[s];
    const SeedSpec eval_seed = c.seed.derive(0x5eed0000 + s);
    const Dataset eval = Dataset::concat(sc.sample1(c.eval_points_per_class, eval_seed.derive(0)),
                                         sc.sample2(c.eval_points_per_class, eval_seed.derive(1)));
    const Index m = eval.size();
    // both classes are sampled at n_per_class, so N2/N1 = 1
    const double gamma = c.gamma ? *c.gamma : 1.0;
    Vector target(m);
    for (Index i = 0; i < m; ++i) {
      const Vector x = eval.row(i);
      const double l1 = sc.log_pdf1(x), l2 = sc.log_pdf2(x);
      target(i) = lpdr ? l1 - l2 : plugin_posterior(l1, l2, gamma);
    }

    // values[t][e * H + g] holds the estimate at every evaluation point
    std::vector<std::vector<Vector>> values(static_cast<std::size_t>(c.trials));
    std::vector<std::vector<double>> hs_used(static_cast<std::size_t>(c.trials));
    std::vector<std::string> failures(static_cast<std::size_t>(c.trials));
    parallel_for(values.size(), [&](std::size_t t) {
      const SeedSpec seed = trial_seed(c, s, static_cast<Index>(t));
      try {
        const Dataset d1 = sc.sample1(sc.n_per_class, seed.derive(0));
        const Dataset d2 = sc.sample2(sc.n_per_class, seed.derive(1));
        const auto hs = trial_bandwidths(c, d1, d2, seed.derive(3));
        const double prior = c.gamma ? *c.gamma : static_cast<double>(d2.size()) / static_cast<double>(d1.size());
        std::vector<Vector> w1, w2;
        for (EstimatorKind e : c.estimators) {
          const auto alpha = make_alpha(c, e, d1, d2, seed.derive(2));
          w1.push_back(alpha->log_eval_rows(d1.points()));
          w2.push_back(alpha->log_eval_rows(d2.points()));
        }
        const std::size_t nh = hs.size();
        std::vector<Vector> vals(c.estimators.size() * nh, Vector(m));
        std::vector<KernelSpec> kernels;
        for (double h : hs) kernels.emplace_back(h);
        const Index dim = d1.dim();
        parallel_for(static_cast<std::size_t>(m), [&](std::size_t ui) {
          const auto i = static_cast<Index>(ui);
          thread_local std::vector<double> sa, sb;
          squared_distances(eval.points().data() + i * dim, d1.points(), sa);
          squared_distances(eval.points().data() + i * dim, d2.points(), sb);
          for (std::size_t e = 0; e < c.estimators.size(); ++e) {
            for (std::size_t g = 0; g < nh; ++g) {
              const double l1 = log_density_from_distances(sa, w1[e], kernels[g], dim);
              const double l2 = log_density_from_distances(sb, w2[e], kernels[g], dim);
              vals[e * nh + g](i) = lpdr ? l1 - l2 : plugin_posterior(l1, l2, prior);
            }
          }
        });
        for (const auto& v : vals)
          if (!v.allFinite()) throw Error(ErrorCode::NumericFailure, "estimate is not finite at an evaluation point");
        values[t] = std::move(vals);
        hs_used[t] = hs;
      } catch (const Error& err) {
        if (!is_recoverable(err.code())) throw;
        failures[t] = err.what();
      }
    });

    std::vector<std::size_t> ok;
    for (std::size_t t = 0; t < values.size(); ++t) {
      if (failures[t].empty()) {
        ok.push_back(t);
      } else {
        ++report.failed_trials;
        report.failures.push_back(sc.label + " trial " + std::to_string(t) + ": " + failures[t]);
      }
    }
    if (ok.empty()) continue;
    const std::size_t nh = hs_used[ok.front()].size();
    for (std::size_t e = 0; e < c.estimators.size(); ++e) {
      for (std::size_t g = 0; g < nh; ++g) {
        const std::size_t k = e * nh + g;
        Vector mean = Vector::Zero(m);
        double h_mean = 0.0;
        for (std::size_t t : ok) {
          mean += values[t][k];
          h_mean += hs_used[t][g];
        }
        const double count = static_cast<double>(ok.size());
        mean /= count;
        h_mean /= count;
        Vector var = Vector::Zero(m);
        std::vector<double> mse;
        for (std::size_t t : ok) {
          var += (values[t][k] - mean).array().square().matrix();
          mse.push_back((values[t][k] - target).squaredNorm() / static_cast<double>(m));
          report.trials.push_back({sc.label, to_string(c.estimators[e]), hs_used[t][g], static_cast<Index>(g),
                                   static_cast<Index>(t), mse.back(), 0.0});
        }
        AggregateRow a;
        a.scenario = sc.label;
        a.estimator = to_string(c.estimators[e]);
        a.h = h_mean;
        a.count = static_cast<Index>(ok.size());
        for (double v : mse) a.mean += v;
        a.mean /= count;
        double ss = 0.0;
        for (double v : mse) ss += (v - a.mean) * (v - a.mean);
        a.std = ok.size() > 1 ? std::sqrt(ss / (count - 1.0)) : 0.0;
        a.bias2 = (mean - target).squaredNorm() / static_cast<double>(m);
        a.variance = var.sum() / (count * static_cast<double>(m));
        a.truth = 0.0;
        report.aggregates.push_back(a);
      }
    }
  }
  // trial rows were emitted grouped by estimator and h; restore trial order
  std::stable_sort(report.trials.begin(), report.trials.end(), [](const TrialRow& a, const TrialRow& b) {
    return std::tie(a.scenario, a.trial) < std::tie(b.scenario, b.trial);
  });
  return report;
}

TrialReport run_experiment(const ExperimentConfig& config) {
  return config.kind == SweepKind::Kl ? run_kl_sweep(config) : run_posterior_bias_sweep(config);
}

std::vector<AggregateRow> aggregate_trials(const std::vector<TrialRow>& rows) {
  // keyed in first-appearance order
  std::vector<std::tuple<std::string, std::string, Index>> keys;
  std::map<std::tuple<std::string, std::string, Index>, std::vector<const TrialRow*>> groups;
  for (const auto& r : rows) {
    auto key = std::make_tuple(r.scenario, r.estimator, r.h_index);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) keys.push_back(key);
    it->second.push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const auto& key : keys) {
    const auto& g = groups[key];
    AggregateRow a;
    a.scenario = std::get<0>(key);
    a.estimator = std::get<1>(key);
    a.count = static_cast<Index>(g.size());
    const double n = static_cast<double>(g.size());
    double mse = 0.0;
    for (const auto* r : g) {
      a.mean += r->estimate;
      a.h += r->h;
      a.truth += r->truth;
      mse += (r->estimate - r->truth) * (r->estimate - r->truth);
    }
    a.mean /= n;
    a.h /= n;
    a.truth /= n;
    if (std::all_of(g.begin(), g.end(), [&](const TrialRow* r) { return r->h == g.front()->h; })) a.h = g.front()->h;
    if (std::all_of(g.begin(), g.end(), [&](const TrialRow* r) { return r->truth == g.front()->truth; })) {
      a.truth = g.front()->truth;
    }
    mse /= n;
    double ss = 0.0;
    for (const auto* r : g) ss += (r->estimate - a.mean) * (r->estimate - a.mean);
    a.variance = ss / n;
    a.std = g.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    a.bias2 = (a.mean - a.truth) * (a.mean - a.truth);
    out.push_back(a);
  }
  // order: scenario appearance, then estimator, then h index
  std::stable_sort(out.begin(), out.end(), [&](const AggregateRow& x, const AggregateRow& y) {
    auto pos = [&](const AggregateRow& r) {
      for (std::size_t i = 0; i < keys.size(); ++i)
        if (std::get<0>(keys[i]) == r.scenario) return i;
      return keys.size();
    };
    return pos(x) < pos(y);
  });
  return out;
}

const AggregateRow* TrialReport::find(const std::string& estimator, double h, const std::string& scenario) const {
  for (const auto& a : aggregates) {
    if (a.estimator == estimator && std::abs(a.h - h) <= 1e-12 * std::max(1.0, std::abs(h)) &&
        (scenario.empty() || a.scenario == scenario)) {
      return &a;
    }
  }
  return nullptr;
}

// ---------------------------------------------------------------- report I/O

std::string format_report(const TrialReport& r) {
  std::ostringstream os;
  os << "# vwkde bench report\n";
  if (!r.config_json.empty()) os << "# config: " << r.config_json << "\n";
  os << "# failed_trials: " << r.failed_trials << "\n";
  for (const auto& f : r.failures) os << "# failure: " << f << "\n";
  os << "scenario,estimator,h,trial,estimate,truth\n";
  for (const auto& t : r.trials) {
    os << t.scenario << ',' << t.estimator << ',' << format_double(t.h) << ',' << t.trial << ','
       << format_double(t.estimate) << ',' << format_double(t.truth) << '\n';
  }
  if (!r.aggregates.empty()) {
    os << "# aggregates\n";
    os << "scenario,estimator,h,count,mean,std,bias2,variance,truth\n";
    for (const auto& a : r.aggregates) {
      os << a.scenario << ',' << a.estimator << ',' << format_double(a.h) << ',' << a.count << ','
         << format_double(a.mean) << ',' << format_double(a.std) << ',' << format_double(a.bias2) << ','
         << format_double(a.variance) << ',' << format_double(a.truth) << '\n';
    }
  }
  return os.str();
}

void write_report(const TrialReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open report for writing: " + path.string());
  out << format_report(report);
  out.flush();
  if (!out) throw Error(ErrorCode::Io, "failed writing report: " + path.string());
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  if (s == "nan") return kNaN;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::Parse, path.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
}

}  // namespace

TrialReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open report " + path.string());
  TrialReport r;
  std::string line;
  std::size_t lineno = 0;
  bool aggregates = false;
  std::map<std::tuple<std::string, std::string, Index>, Index> next_index;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("# config: ", 0) == 0) {
      r.config_json = line.substr(10);
    } else if (line.rfind("# failed_trials: ", 0) == 0) {
      r.failed_trials = static_cast<Index>(parse_number(line.substr(17), path, lineno));
    } else if (line.rfind("# failure: ", 0) == 0) {
      r.failures.push_back(line.substr(11));
    } else if (line == "# aggregates") {
      aggregates = true;
    } else if (line[0] == '#' || line.rfind("scenario,", 0) == 0) {
      continue;
    } else {
      const auto f = split(line);
      auto num = [&](std::size_t k) { return parse_number(f[k], path, lineno); };
      if (!aggregates) {
        if (f.size() != 6) throw Error(ErrorCode::Parse, path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
        TrialRow t{f[0], f[1], num(2), 0, static_cast<Index>(num(3)), num(4), num(5)};
        t.h_index = next_index[{t.scenario, t.estimator, t.trial}]++;
        r.trials.push_back(t);
      } else {
        if (f.size() != 9) throw Error(ErrorCode::Parse, path.string() + ":" + std::to_string(lineno) + ": expected 9 fields");
        r.aggregates.push_back(
            {f[0], f[1], num(2), static_cast<Index>(num(3)), num(4), num(5), num(6), num(7), num(8)});
      }
    }
  }
  return r;
}

}  // namespace vwkde
