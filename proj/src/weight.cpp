#include "vwkde/weight.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "vwkde/io.hpp"
#include "vwkde/kde.hpp"
#include "vwkde/parallel.hpp"

namespace vwkde {

double AlphaFunction::eval(const Vector& x) const { return std::exp(log_eval(x)); }

Vector AlphaFunction::log_eval_rows(const Points& x) const {
  Vector out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out(i) = log_eval(x.row(i).transpose());
  return out;
}

ConstantAlpha::ConstantAlpha(double c) : c_(c), log_c_(std::log(c)) {
  if (!(c > 0.0) || !std::isfinite(c)) throw Error(ErrorCode::InvalidConfig, "constant weight must be positive");
}

AnalyticHomoscedasticAlpha::AnalyticHomoscedasticAlpha(Vector center, Matrix curvature, double b)
    : center_(std::move(center)), curvature_(std::move(curvature)), b_(b) {
  if (curvature_.rows() != center_.size() || curvature_.cols() != center_.size()) {
    throw Error(ErrorCode::InvalidConfig, "curvature/center shape mismatch");
  }
}

double AnalyticHomoscedasticAlpha::log_eval(const Vector& x) const {
  const Vector u = x - center_;
  return -0.5 * u.dot(curvature_ * u);
}

Vector AnalyticHomoscedasticAlpha::grad_log(const Vector& x) const { return -(curvature_ * (x - center_)); }

AnalyticHomoscedasticAlpha analytic_alpha(const Vector& mu1, const Vector& mu2, const Matrix& shared_covariance,
                                          double b) {
  if (mu1.size() != mu2.size()) throw Error(ErrorCode::InvalidConfig, "means differ in dimension");
  const GaussianModel model(mu1, shared_covariance);
  const Matrix& precision = model.precision();
  const Vector a = precision * (mu1 - mu2);
  const double a2 = a.squaredNorm();
  if (!(a2 > 0.0)) throw Error(ErrorCode::DegenerateDirection, "mu1 == mu2 leaves the projector undefined");
  const Index d = mu1.size();
  Matrix curvature = b * (Matrix::Identity(d, d) - a * a.transpose() / a2) - precision;
  curvature = 0.5 * (curvature + curvature.transpose());
  return AnalyticHomoscedasticAlpha(0.5 * (mu1 + mu2), std::move(curvature), b);
}

// --- RKHS log-weight -------------------------------------------------------

namespace {

/// exp(-|x_i - b_k|^2 / (2 sigma^2)) for all pairs, via the norm expansion.
Matrix gaussian_gram(const Points& x, const Points& basis, double sigma) {
  const Vector xn = x.rowwise().squaredNorm();
  const Vector bn = basis.rowwise().squaredNorm();
  Matrix sq = -2.0 * (x * basis.transpose());
  sq.colwise() += xn;
  sq.rowwise() += bn.transpose();
  const double scale = -1.0 / (2.0 * sigma * sigma);
  return (sq.array().max(0.0) * scale).exp().matrix();
}

}  // namespace

RkhsLogAlpha::RkhsLogAlpha(Points basis, Vector theta, double sigma)
    : basis_(std::move(basis)), theta_(std::move(theta)), sigma_(sigma) {
  if (basis_.rows() < 1) throw Error(ErrorCode::InvalidConfig, "RKHS weight needs at least one basis point");
  if (theta_.size() != basis_.rows()) throw Error(ErrorCode::InvalidConfig, "theta length must equal basis size");
  if (!(sigma_ > 0.0)) throw Error(ErrorCode::InvalidConfig, "basis kernel width must be positive");
  if (!theta_.allFinite() || !basis_.allFinite()) throw Error(ErrorCode::InvalidData, "non-finite RKHS parameters");
}

double RkhsLogAlpha::log_eval(const Vector& x) const {
  if (x.size() != basis_.cols()) throw Error(ErrorCode::InvalidConfig, "query dimension mismatch");
  const double scale = 1.0 / (2.0 * sigma_ * sigma_);
  double s = 0.0;
  for (Index k = 0; k < basis_.rows(); ++k) {
    s += theta_(k) * std::exp(-(basis_.row(k).transpose() - x).squaredNorm() * scale);
  }
  return s;
}

Vector RkhsLogAlpha::grad_log(const Vector& x) const {
  if (x.size() != basis_.cols()) throw Error(ErrorCode::InvalidConfig, "query dimension mismatch");
  const double scale = 1.0 / (2.0 * sigma_ * sigma_);
  Vector g = Vector::Zero(x.size());
  for (Index k = 0; k < basis_.rows(); ++k) {
    const Vector diff = basis_.row(k).transpose() - x;
    g += theta_(k) * std::exp(-diff.squaredNorm() * scale) * diff;
  }
  return g / (sigma_ * sigma_);
}

Vector RkhsLogAlpha::log_eval_rows(const Points& x) const {
  if (x.cols() != basis_.cols()) throw Error(ErrorCode::InvalidConfig, "query dimension mismatch");
  constexpr Index kChunk = 1024;
  Vector out(x.rows());
  for (Index start = 0; start < x.rows(); start += kChunk) {
    const Index len = std::min(kChunk, x.rows() - start);
    out.segment(start, len) = gaussian_gram(x.middleRows(start, len), basis_, sigma_) * theta_;
  }
  return out;
}

void RkhsLogAlpha::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "# sigma=" << format_double(sigma_) << '\n';
  for (Index k = 0; k < basis_.rows(); ++k) {
    for (Index j = 0; j < basis_.cols(); ++j) out << format_double(basis_(k, j)) << ',';
    out << format_double(theta_(k)) << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

RkhsLogAlpha RkhsLogAlpha::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string first;
  std::getline(in, first);
  const std::string key = "# sigma=";
  if (first.rfind(key, 0) != 0) throw Error(ErrorCode::Parse, path.string() + ": missing '# sigma=' header");
  double sigma = 0.0;
  try {
    sigma = std::stod(first.substr(key.size()));
  } catch (const std::exception&) {
    throw Error(ErrorCode::Parse, path.string() + ": bad sigma value");
  }
  const Dataset table = read_dataset_csv(path);
  if (table.dim() < 2) throw Error(ErrorCode::Parse, path.string() + ": need basis columns plus theta");
  const Index d = table.dim() - 1;
  Points basis = table.points().leftCols(d);
  Vector theta = table.points().col(d);
  return RkhsLogAlpha(std::move(basis), std::move(theta), sigma);
}

// --- Quadratic fit ---------------------------------------------------------

double RkhsProblem::objective(const Vector& theta) const {
  const Vector d = design * theta;
  const Vector per_sample = (0.5 * d.array().square() + d.array() * target.array()).matrix();
  return sample_weights.dot(per_sample) + lambda * theta.squaredNorm();
}

Vector RkhsProblem::gradient(const Vector& theta) const {
  const Vector d = design * theta;
  return design.transpose() * (sample_weights.array() * (d + target).array()).matrix() + 2.0 * lambda * theta;
}

Matrix RkhsProblem::normal_matrix() const {
  const Index m = design.cols();
  const Matrix scaled = sample_weights.array().sqrt().matrix().asDiagonal() * design;
  Matrix g = Matrix::Zero(m, m);
  g.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
  g = g.selfadjointView<Eigen::Lower>();
  g.diagonal().array() += 2.0 * lambda;
  return g;
}

Vector RkhsProblem::linear_term() const {
  return design.transpose() * (sample_weights.array() * target.array()).matrix();
}

RkhsProblem build_rkhs_problem(const Dataset& data1, const Dataset& data2, const PairScores& pair,
                               const RkhsFitOptions& options) {
  if (data1.dim() != data2.dim() || data1.dim() != pair.dim()) {
    throw Error(ErrorCode::InvalidConfig, "datasets and score fields differ in dimension");
  }
  const Dataset pooled = Dataset::concat(data1, data2);
  const Index n = pooled.size();
  if (n < 2) throw Error(ErrorCode::InsufficientData, "weight fit needs N1 + N2 >= 2");
  if (options.max_basis < 1) throw Error(ErrorCode::InvalidConfig, "max_basis must be >= 1");

  RkhsProblem problem;
  problem.samples = pooled.points();

  if (n <= options.max_basis) {
    problem.basis = pooled.points();
  } else {
    std::vector<Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Index{0});
    auto rng = options.seed.engine();
    for (Index i = 0; i < options.max_basis; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(pick(rng))]);
    }
    rows.resize(static_cast<std::size_t>(options.max_basis));
    std::sort(rows.begin(), rows.end());
    problem.basis = pooled.select(rows).points();
  }

  if (options.sigma) {
    problem.sigma = *options.sigma;
  } else {
    problem.sigma = median_pairwise_distance(pooled);
  }
  if (!(problem.sigma > 0.0)) throw Error(ErrorCode::InvalidConfig, "basis kernel width must be positive");
  problem.lambda = options.lambda ? *options.lambda : 1e-3 * static_cast<double>(n);
  if (!(problem.lambda > 0.0)) throw Error(ErrorCode::InvalidConfig, "lambda must be positive");

  const Index d = pooled.dim();
  Points h(n, d);
  problem.target.resize(n);
  problem.sample_weights = Vector::Ones(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t ui) {
    const auto i = static_cast<Index>(ui);
    const Vector x = pooled.row(i);
    h.row(i) = pair.score_difference(x).transpose();
    problem.target(i) = pair.laplacian_difference(x);
    if (options.sample_weight) problem.sample_weights(i) = options.sample_weight(x);
  });
  if (!h.allFinite() || !problem.target.allFinite()) {
    throw Error(ErrorCode::NumericFailure, "score fields returned non-finite values at the samples");
  }
  if ((problem.sample_weights.array() < 0.0).any() || !problem.sample_weights.allFinite()) {
    throw Error(ErrorCode::InvalidConfig, "sample weights must be finite and non-negative");
  }

  // grad_x kappa(x_i, b_k) . h_i = kappa_ik (b_k . h_i - x_i . h_i) / sigma^2
  const Points& x = problem.samples;
  const Points& basis = problem.basis;
  Matrix proj = h * basis.transpose();
  proj.colwise() -= (x.cwiseProduct(h)).rowwise().sum();
  problem.design = gaussian_gram(x, basis, problem.sigma).cwiseProduct(proj) / (problem.sigma * problem.sigma);
  return problem;
}

RkhsFit solve_rkhs_problem(const RkhsProblem& problem) {
  const Matrix a = problem.normal_matrix();
  const Vector c = problem.linear_term();
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "regularized normal matrix is not positive definite (M=" << a.rows()
        << ", lambda=" << problem.lambda << ", min diag=" << a.diagonal().minCoeff()
        << ", max diag=" << a.diagonal().maxCoeff() << ")";
    throw Error(ErrorCode::NumericFailure, msg.str());
  }
  Vector theta = llt.solve(-c);
  // two rounds of iterative refinement tighten the stationarity residual
  for (int round = 0; round < 2; ++round) {
    const Vector r = a * theta + c;
    theta -= llt.solve(r);
  }
  if (!theta.allFinite()) throw Error(ErrorCode::NumericFailure, "weight solve produced non-finite theta");

  RkhsFit fit{RkhsLogAlpha(problem.basis, theta, problem.sigma)};
  fit.objective = problem.objective(theta);
  fit.stationarity_residual = (a * theta + c).norm();
  fit.linear_term_norm = c.norm();
  fit.sigma = problem.sigma;
  fit.lambda = problem.lambda;
  return fit;
}

RkhsFit fit_rkhs_alpha(const Dataset& data1, const Dataset& data2, const PairScores& pair,
                       const RkhsFitOptions& options) {
  return solve_rkhs_problem(build_rkhs_problem(data1, data2, pair, options));
}

RkhsFit fit_model_based_alpha(const Dataset& data1, const Dataset& data2, const RkhsFitOptions& options) {
  return fit_rkhs_alpha(data1, data2, gaussian_pair_scores(data1, data2), options);
}

// --- Diagnostics -----------------------------------------------------------

double pointwise_bias(const AlphaFunction& alpha, const PairScores& pair, const Vector& x) {
  return alpha.grad_log(x).dot(pair.score_difference(x)) + pair.laplacian_difference(x);
}

double el_residual(const AlphaFunction& alpha, const PairScores& pair, const SampleWeightFn& r, const Vector& x,
                   double step) {
  if (!(step > 0.0)) throw Error(ErrorCode::InvalidConfig, "finite-difference step must be positive");
  if (!r) throw Error(ErrorCode::InvalidConfig, "weight callback is empty");
  auto field = [&](const Vector& y) -> Vector {
    return r(y) * pointwise_bias(alpha, pair, y) * pair.score_difference(y);
  };
  double div = 0.0;
  Vector y = x;
  for (Index d = 0; d < x.size(); ++d) {
    y(d) = x(d) + step;
    const double plus = field(y)(d);
    y(d) = x(d) - step;
    const double minus = field(y)(d);
    y(d) = x(d);
    div += (plus - minus) / (2.0 * step);
  }
  return div;
}

}  // namespace vwkde
