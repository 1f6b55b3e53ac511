#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vwkde/bench.hpp"
#include "vwkde/core.hpp"
#include "vwkde/estimators.hpp"
#include "vwkde/inspection.hpp"
#include "vwkde/io.hpp"
#include "vwkde/kde.hpp"
#include "vwkde/parallel.hpp"
#include "vwkde/weight.hpp"

namespace fs = std::filesystem;
using namespace vwkde;

namespace {

constexpr int kExitNumeric = 1;
constexpr int kExitUsage = 2;

struct RatioArgs {
  std::string p1, p2;
  std::string estimator = "vwkde-mb";
  std::optional<double> h;
  std::vector<double> h_grid;
  double bandwidth_fraction = 0.25;
  std::optional<double> sigma;
  std::optional<double> lambda;
  Index max_basis = 3000;
  std::uint64_t seed = 0;
  std::string alpha_path;
  std::string output;
};

struct QueryArgs {
  std::string query;
  std::optional<double> gamma;
};

struct FitArgs {
  std::string p1, p2;
  std::optional<double> sigma;
  std::optional<double> lambda;
  Index max_basis = 3000;
  std::uint64_t seed = 0;
  std::string output;
};

struct BenchArgs {
  std::string config;
  std::string output;
};

struct InspectArgs {
  std::string normals;
  std::vector<std::string> queries;
  Index k = 5;
  std::optional<double> h;
  double factor = 0.9;
  std::optional<double> sigma;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  std::string output;
};

std::string opt_string(const std::optional<double>& v, const char* fallback) {
  return v ? format_double(*v) : std::string(fallback);
}

void add_ratio_options(CLI::App* cmd, RatioArgs& a, bool allow_grid) {
  cmd->add_option("--p1", a.p1, "CSV sample of class 1 (one point per row)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--p2", a.p2, "CSV sample of class 2")->required()->check(CLI::ExistingFile);
  cmd->add_option("--estimator", a.estimator, "kde or vwkde-mb")
      ->check(CLI::IsMember({"kde", "vwkde-mb"}))
      ->capture_default_str();
  auto* h = cmd->add_option("--h", a.h, "Kernel bandwidth; LOO heuristic on the pooled sample when omitted")
                ->check(CLI::PositiveNumber);
  if (allow_grid) {
    cmd->add_option("--h-grid", a.h_grid, "Comma-separated bandwidths; one estimate per value")
        ->delimiter(',')
        ->check(CLI::PositiveNumber)
        ->excludes(h);
  }
  cmd->add_option("--bandwidth-fraction", a.bandwidth_fraction, "Subsample fraction for the bandwidth heuristic")
      ->check(CLI::Range(1e-9, 1.0))
      ->capture_default_str();
  cmd->add_option("--sigma", a.sigma, "RKHS basis width (default: median pairwise distance)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--lambda", a.lambda, "l2 penalty on theta (default: 1e-3 * (N1 + N2))")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--max-basis", a.max_basis, "Basis size cap")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--seed", a.seed, "Master seed")->capture_default_str();
  cmd->add_option("--alpha", a.alpha_path, "Use a saved RKHS weight (from fit-alpha) instead of fitting")
      ->check(CLI::ExistingFile);
  cmd->add_option("--output", a.output, "Write the CSV report here");
}

struct Prepared {
  Dataset d1;
  Dataset d2;
  std::shared_ptr<const AlphaFunction> alpha;
  std::vector<double> hs;
  std::string bandwidth_source;
  std::optional<RkhsFit> fit;
};

RkhsFitOptions fit_options(std::optional<double> sigma, std::optional<double> lambda, Index max_basis,
                           std::uint64_t seed) {
  RkhsFitOptions o;
  o.sigma = sigma;
  o.lambda = lambda;
  o.max_basis = max_basis;
  o.seed = SeedSpec{seed}.derive(2);
  return o;
}

Prepared prepare(const RatioArgs& a) {
  Prepared p{read_dataset_csv(a.p1), read_dataset_csv(a.p2), nullptr, {}, {}, std::nullopt};
  if (p.d1.dim() != p.d2.dim()) throw Error(ErrorCode::InvalidConfig, "--p1 and --p2 differ in dimension");
  if (!a.h_grid.empty()) {
    p.hs = a.h_grid;
    p.bandwidth_source = "grid";
  } else if (a.h) {
    p.hs = {*a.h};
    p.bandwidth_source = "fixed";
  } else {
    const Dataset pooled = Dataset::concat(p.d1, p.d2);
    p.hs = {select_bandwidth(pooled, default_bandwidth_grid(pooled), a.bandwidth_fraction, SeedSpec{a.seed}.derive(3))};
    p.bandwidth_source = "loo-heuristic";
  }
  if (a.estimator == "kde") {
    p.alpha = std::make_shared<ConstantAlpha>();
  } else if (!a.alpha_path.empty()) {
    auto loaded = std::make_shared<RkhsLogAlpha>(RkhsLogAlpha::load_csv(a.alpha_path));
    if (loaded->basis().cols() != p.d1.dim()) throw Error(ErrorCode::InvalidConfig, "--alpha dimension mismatch");
    p.alpha = std::move(loaded);
  } else {
    p.fit = fit_model_based_alpha(p.d1, p.d2, fit_options(a.sigma, a.lambda, a.max_basis, a.seed));
    p.alpha = std::make_shared<RkhsLogAlpha>(p.fit->alpha);
  }
  return p;
}

void write_header(std::ostream& out, const std::string& command, const RatioArgs& a, const Prepared& p) {
  out << "# vwkde " << command << "\n";
  out << "# p1: " << a.p1 << " (N1=" << p.d1.size() << ", D=" << p.d1.dim() << ")\n";
  out << "# p2: " << a.p2 << " (N2=" << p.d2.size() << ")\n";
  out << "# estimator: " << a.estimator << "\n";
  out << "# bandwidth: " << p.bandwidth_source;
  if (p.bandwidth_source == "loo-heuristic") out << " (fraction " << format_double(a.bandwidth_fraction) << ")";
  out << "\n";
  if (a.estimator == "vwkde-mb") {
    if (!a.alpha_path.empty()) {
      out << "# alpha: " << a.alpha_path << "\n";
    } else {
      out << "# sigma: " << format_double(p.fit->sigma) << (a.sigma ? "" : " (median pairwise distance)") << "\n";
      out << "# lambda: " << format_double(p.fit->lambda) << (a.lambda ? "" : " (1e-3 * (N1 + N2))") << "\n";
      out << "# max_basis: " << a.max_basis << "\n";
    }
  }
  out << "# seed: " << a.seed << "\n";
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  return out;
}

int cmd_kl(const RatioArgs& a) {
  const Prepared p = prepare(a);
  const auto est = kl_estimate_grid(p.d1, p.d2, *p.alpha, p.hs);
  std::ostringstream table;
  write_header(table, "kl", a, p);
  table << "h,kl,flagged_terms\n";
  for (std::size_t g = 0; g < p.hs.size(); ++g) {
    table << format_double(p.hs[g]) << ',' << format_double(est[g].value) << ',' << est[g].flagged_terms << "\n";
  }
  if (p.hs.size() == 1) {
    std::cout << format_double(est[0].value) << "\n";
  } else {
    std::cout << table.str();
  }
  for (std::size_t g = 0; g < est.size(); ++g) {
    if (est[g].flagged_terms > 0) {
      std::cerr << "warning: " << est[g].flagged_terms << " non-finite terms excluded at h=" << format_double(p.hs[g])
                << "\n";
    }
  }
  if (!a.output.empty()) open_output(a.output) << table.str();
  for (const auto& e : est)
    if (!std::isfinite(e.value)) return kExitNumeric;
  return 0;
}

int cmd_pointwise(const std::string& command, const RatioArgs& a, const QueryArgs& q) {
  const Prepared p = prepare(a);
  const Dataset query = read_dataset_csv(q.query);
  if (query.dim() != p.d1.dim()) throw Error(ErrorCode::InvalidConfig, "--query dimension differs from the samples");
  const RatioEstimator est(p.d1, p.d2, p.alpha, p.hs.front(), q.gamma);
  std::ostringstream out;
  write_header(out, command, a, p);
  out << "# h: " << format_double(p.hs.front()) << "\n";
  if (command == "posterior") {
    out << "# gamma: " << format_double(est.gamma()) << (q.gamma ? "" : " (N2/N1)") << "\n";
  }
  for (Index j = 0; j < query.dim(); ++j) out << 'x' << j << ',';
  out << command << "\n";
  bool numeric_trouble = false;
  for (Index i = 0; i < query.size(); ++i) {
    const Vector x = query.row(i);
    double v;
    if (command == "posterior") {
      try {
        v = est.posterior_at(x);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::UndefinedPosterior) throw;
        v = std::numeric_limits<double>::quiet_NaN();
      }
    } else {
      v = est.lpdr_at(x);
    }
    numeric_trouble = numeric_trouble || std::isnan(v);
    for (Index j = 0; j < query.dim(); ++j) out << format_double(x(j)) << ',';
    out << format_double(v) << "\n";
  }
  if (a.output.empty()) {
    std::cout << out.str();
  } else {
    open_output(a.output) << out.str();
  }
  if (numeric_trouble) {
    std::cerr << "warning: some query points have both class densities equal to zero (value nan)\n";
    return kExitNumeric;
  }
  return 0;
}

int cmd_fit_alpha(const FitArgs& a) {
  const Dataset d1 = read_dataset_csv(a.p1), d2 = read_dataset_csv(a.p2);
  const RkhsFit fit = fit_model_based_alpha(d1, d2, fit_options(a.sigma, a.lambda, a.max_basis, a.seed));
  fit.alpha.save_csv(a.output);
  std::cout << "basis " << fit.alpha.basis_size() << ", sigma " << format_double(fit.sigma) << ", lambda "
            << format_double(fit.lambda) << ", objective " << format_double(fit.objective)
            << ", stationarity residual " << format_double(fit.stationarity_residual) << "\n";
  return 0;
}

int cmd_bench(const BenchArgs& a) {
  const ExperimentConfig config = load_experiment_config(a.config);
  const TrialReport report = run_experiment(config);
  write_report(report, a.output);
  std::cout << "scenario,estimator,h,count,mean,std,bias2,variance,truth\n";
  for (const auto& r : report.aggregates) {
    std::cout << r.scenario << ',' << r.estimator << ',' << format_double(r.h) << ',' << r.count << ','
              << format_double(r.mean) << ',' << format_double(r.std) << ',' << format_double(r.bias2) << ','
              << format_double(r.variance) << ',' << format_double(r.truth) << "\n";
  }
  if (report.failed_trials > 0) {
    std::cerr << report.failed_trials << " trials failed; see the report header\n";
  }
  return 0;
}

int cmd_inspect(const InspectArgs& a) {
  const auto normal_paths = list_pgm_files(a.normals);
  if (normal_paths.empty()) throw Error(ErrorCode::Io, "no .pgm files in " + a.normals);
  std::vector<GrayImage> normals;
  std::vector<std::string> names;
  for (const auto& path : normal_paths) {
    normals.push_back(load_pgm(path));
    names.push_back(path.filename().string());
  }
  std::vector<fs::path> queries;
  for (const auto& q : a.queries) {
    if (fs::is_directory(q)) {
      for (const auto& p : list_pgm_files(q)) queries.push_back(p);
    } else {
      queries.emplace_back(q);
    }
  }
  const InspectionModel model = build_inspection_model(normals, names);
  DetectOptions opt;
  opt.k = std::min<Index>(a.k, static_cast<Index>(normals.size()));
  opt.h = a.h;
  opt.fit.sigma = a.sigma;
  opt.fit.lambda = a.lambda;
  opt.seed = SeedSpec{a.seed};

  std::ostringstream out;
  out << "# vwkde inspect\n";
  out << "# normals: " << a.normals << " (" << normals.size() << " images)\n";
  out << "# patch: 32, stride: 16, k: " << opt.k << ", factor: " << format_double(a.factor) << "\n";
  out << "# h: " << opt_string(a.h, "loo-heuristic per query (fraction 0.25)") << "\n";
  out << "# sigma: " << opt_string(a.sigma, "median pairwise distance") << "\n";
  out << "# lambda: " << opt_string(a.lambda, "1e-3 * (N1 + N2)") << "\n";
  out << "# seed: " << a.seed << "\n";
  out << "image,score,best_match,h,localized,box_row,box_col,box_h,box_w,confidence\n";
  for (const auto& q : queries) {
    const GrayImage img = load_pgm(q);
    const InspectionResult r = inspect_image(model, img, opt, a.factor);
    const auto& loc = r.localization;
    out << q.filename().string() << ',' << format_double(r.detection.score) << ','
        << model.names[static_cast<std::size_t>(r.detection.best_match)] << ',' << format_double(r.detection.h) << ','
        << (loc.localized ? 1 : 0) << ',' << loc.box.row << ',' << loc.box.col << ',' << loc.box.height << ','
        << loc.box.width << ',' << format_double(loc.confidence) << "\n";
    for (const auto& d : r.detection.diagnostics) std::cerr << q.filename().string() << ": " << d << "\n";
  }
  if (a.output.empty()) {
    std::cout << out.str();
  } else {
    open_output(a.output) << out.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variationally weighted KDE: density ratio, posterior and KL estimation"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  app.fallthrough();
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all cores); results do not depend on it")
      ->capture_default_str();

  RatioArgs kl_args, post_args, lpdr_args;
  QueryArgs post_q, lpdr_q;
  auto* kl = app.add_subcommand("kl", "KL(p1 || p2) with leave-one-out in the numerator");
  add_ratio_options(kl, kl_args, true);

  auto* post = app.add_subcommand("posterior", "Plug-in posterior P(class 1 | x) at query points");
  add_ratio_options(post, post_args, false);
  post->add_option("--query", post_q.query, "CSV of query points")->required()->check(CLI::ExistingFile);
  post->add_option("--gamma", post_q.gamma, "Prior ratio P(class 2) / P(class 1) (default: N2/N1)")
      ->check(CLI::PositiveNumber);

  auto* lpdr = app.add_subcommand("lpdr", "Log density ratio log p1(x) - log p2(x) at query points");
  add_ratio_options(lpdr, lpdr_args, false);
  lpdr->add_option("--query", lpdr_q.query, "CSV of query points")->required()->check(CLI::ExistingFile);

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit-alpha", "Fit the model-based weight and save it as RKHS CSV");
  fit->add_option("--p1", fit_args.p1, "CSV sample of class 1")->required()->check(CLI::ExistingFile);
  fit->add_option("--p2", fit_args.p2, "CSV sample of class 2")->required()->check(CLI::ExistingFile);
  fit->add_option("--sigma", fit_args.sigma, "RKHS basis width (default: median pairwise distance)")
      ->check(CLI::PositiveNumber);
  fit->add_option("--lambda", fit_args.lambda, "l2 penalty (default: 1e-3 * (N1 + N2))")->check(CLI::PositiveNumber);
  fit->add_option("--max-basis", fit_args.max_basis, "Basis size cap")->check(CLI::PositiveNumber)->capture_default_str();
  fit->add_option("--seed", fit_args.seed, "Master seed")->capture_default_str();
  fit->add_option("--output", fit_args.output, "RKHS CSV destination")->required();

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Run a seeded Monte Carlo experiment from a JSON config");
  bench->add_option("--config", bench_args.config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  bench->add_option("--output", bench_args.output, "CSV report destination")->required();

  InspectArgs insp;
  auto* inspect = app.add_subcommand("inspect", "Score query images against a directory of normal images");
  inspect->add_option("--normals", insp.normals, "Directory of normal .pgm images")
      ->required()
      ->check(CLI::ExistingDirectory);
  inspect->add_option("--query", insp.queries, "Query .pgm image(s) or directories")->required()->check(CLI::ExistingPath);
  inspect->add_option("--k", insp.k, "Normals re-scored with VWKDE")->check(CLI::PositiveNumber)->capture_default_str();
  inspect->add_option("--h", insp.h, "Fixed bandwidth (default: LOO heuristic per query)")->check(CLI::PositiveNumber);
  inspect->add_option("--factor", insp.factor, "Localization keeps patches within this fraction of the max LPDR")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  inspect->add_option("--sigma", insp.sigma, "RKHS basis width")->check(CLI::PositiveNumber);
  inspect->add_option("--lambda", insp.lambda, "l2 penalty")->check(CLI::PositiveNumber);
  inspect->add_option("--seed", insp.seed, "Master seed")->capture_default_str();
  inspect->add_option("--output", insp.output, "CSV destination (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    set_thread_count(threads);
    if (*kl) return cmd_kl(kl_args);
    if (*post) return cmd_pointwise("posterior", post_args, post_q);
    if (*lpdr) return cmd_pointwise("lpdr", lpdr_args, lpdr_q);
    if (*fit) return cmd_fit_alpha(fit_args);
    if (*bench) return cmd_bench(bench_args);
    if (*inspect) return cmd_inspect(insp);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::NumericFailure:
      case ErrorCode::DegenerateModel:
      case ErrorCode::DegenerateDirection:
      case ErrorCode::DegenerateFeatures:
      case ErrorCode::UndefinedPosterior:
        return kExitNumeric;
      default:
        return kExitUsage;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
