#include "vwkde/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace vwkde {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidData: return "invalid data";
    case ErrorCode::InvalidConfig: return "invalid config";
    case ErrorCode::DegenerateModel: return "degenerate model";
    case ErrorCode::InsufficientData: return "insufficient data";
    case ErrorCode::NumericFailure: return "numeric failure";
    case ErrorCode::UndefinedPosterior: return "undefined posterior";
    case ErrorCode::DegenerateDirection: return "degenerate direction";
    case ErrorCode::DegenerateFeatures: return "degenerate features";
    case ErrorCode::Parse: return "parse error";
    case ErrorCode::Io: return "I/O error";
  }
  return "error";
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

SeedSpec SeedSpec::derive(std::uint64_t index) const {
  return SeedSpec{splitmix64(master ^ splitmix64(index + 0x632BE59BD9B4E019ull))};
}

Dataset::Dataset(Points points, std::optional<int> label)
    : points_(std::move(points)), label_(label) {
  if (points_.rows() < 1 || points_.cols() < 1) {
    throw Error(ErrorCode::InvalidData, "dataset needs at least one point of dimension >= 1");
  }
  if (!points_.allFinite()) {
    throw Error(ErrorCode::InvalidData, "dataset contains non-finite coordinates");
  }
  if (label_ && *label_ != 1 && *label_ != 2) {
    throw Error(ErrorCode::InvalidData, "class label must be 1 or 2");
  }
}

Dataset Dataset::without_row(Index i) const {
  if (i < 0 || i >= size()) throw Error(ErrorCode::InvalidConfig, "row index out of range");
  if (size() < 2) throw Error(ErrorCode::InsufficientData, "cannot remove the only row");
  Points out(size() - 1, dim());
  out.topRows(i) = points_.topRows(i);
  out.bottomRows(size() - 1 - i) = points_.bottomRows(size() - 1 - i);
  return Dataset(std::move(out), label_);
}

Dataset Dataset::select(std::span<const Index> rows) const {
  Points out(static_cast<Index>(rows.size()), dim());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= size()) throw Error(ErrorCode::InvalidConfig, "row index out of range");
    out.row(static_cast<Index>(r)) = points_.row(rows[r]);
  }
  return Dataset(std::move(out), label_);
}

Dataset Dataset::concat(const Dataset& a, const Dataset& b) {
  if (a.dim() != b.dim()) throw Error(ErrorCode::InvalidConfig, "dimension mismatch in concat");
  Points out(a.size() + b.size(), a.dim());
  out.topRows(a.size()) = a.points();
  out.bottomRows(b.size()) = b.points();
  return Dataset(std::move(out));
}

GaussianModel::GaussianModel(Vector mean, Matrix covariance)
    : mean_(std::move(mean)), covariance_(std::move(covariance)) {
  const Index d = mean_.size();
  if (d < 1 || covariance_.rows() != d || covariance_.cols() != d) {
    throw Error(ErrorCode::InvalidConfig, "mean/covariance shape mismatch");
  }
  if (!mean_.allFinite() || !covariance_.allFinite()) {
    throw Error(ErrorCode::InvalidData, "non-finite Gaussian parameters");
  }
  const double scale = std::max(1.0, covariance_.cwiseAbs().maxCoeff());
  if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw Error(ErrorCode::DegenerateModel, "covariance is not symmetric");
  }
  covariance_ = 0.5 * (covariance_ + covariance_.transpose());
  Eigen::LLT<Matrix> llt(covariance_);
  if (llt.info() != Eigen::Success || (llt.matrixL().toDenseMatrix().diagonal().array() <= 0).any()) {
    throw Error(ErrorCode::DegenerateModel, "covariance is not positive definite");
  }
  lower_ = llt.matrixL();
  precision_ = llt.solve(Matrix::Identity(d, d));
  precision_ = 0.5 * (precision_ + precision_.transpose());
  log_det_ = 2.0 * lower_.diagonal().array().log().sum();
}

double GaussianModel::log_pdf(const Vector& x) const {
  if (x.size() != dim()) throw Error(ErrorCode::InvalidConfig, "dimension mismatch in log_pdf");
  const Vector z = lower_.triangularView<Eigen::Lower>().solve(x - mean_);
  return -0.5 * (static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi) + log_det_ + z.squaredNorm());
}

namespace {

double default_ridge(const Matrix& cov) {
  return 1e-6 * cov.trace() / static_cast<double>(cov.rows());
}

}  // namespace

GaussianModel fit_gaussian(const Dataset& data, std::optional<double> shrinkage) {
  if (data.size() < 2) throw Error(ErrorCode::InsufficientData, "fit_gaussian needs N >= 2");
  if (shrinkage && !(*shrinkage >= 0.0)) throw Error(ErrorCode::InvalidConfig, "shrinkage must be >= 0");
  const Points& x = data.points();
  Vector mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - mean.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(data.size() - 1);
  const double ridge = shrinkage ? *shrinkage : default_ridge(cov);
  cov.diagonal().array() += ridge;
  return GaussianModel(std::move(mean), std::move(cov));
}

Matrix pooled_covariance(const Dataset& data1, const Dataset& data2, std::optional<double> shrinkage) {
  if (data1.dim() != data2.dim()) throw Error(ErrorCode::InvalidConfig, "dimension mismatch");
  if (data1.size() + data2.size() < 3) throw Error(ErrorCode::InsufficientData, "pooled covariance needs N1 + N2 >= 3");
  auto scatter = [](const Points& x) {
    const Eigen::RowVectorXd m = x.colwise().mean();
    const Matrix c = x.rowwise() - m;
    return Matrix(c.transpose() * c);
  };
  Matrix cov = (scatter(data1.points()) + scatter(data2.points())) /
               static_cast<double>(data1.size() + data2.size() - 2);
  cov.diagonal().array() += shrinkage ? *shrinkage : default_ridge(cov);
  return cov;
}

Dataset sample_gaussian(const GaussianModel& model, Index n, SeedSpec seed) {
  if (n < 1) throw Error(ErrorCode::InvalidConfig, "sample count must be >= 1");
  auto rng = seed.engine();
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index d = model.dim();
  Points z(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) z(i, j) = normal(rng);
  Points out = z * model.cholesky_lower().transpose();
  out.rowwise() += model.mean().transpose();
  return Dataset(std::move(out));
}

Dataset sample_mixture(std::span<const MixtureComponent> components, Index n, SeedSpec seed) {
  if (components.empty()) throw Error(ErrorCode::InvalidConfig, "mixture has no components");
  if (n < 1) throw Error(ErrorCode::InvalidConfig, "sample count must be >= 1");
  double total = 0.0;
  const Index d = components.front().model.dim();
  for (const auto& c : components) {
    if (!(c.weight > 0.0)) throw Error(ErrorCode::InvalidConfig, "mixture weights must be positive");
    if (c.model.dim() != d) throw Error(ErrorCode::InvalidConfig, "mixture components differ in dimension");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw Error(ErrorCode::InvalidConfig, "mixture weights must sum to 1");

  auto rng = seed.engine();
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Points out(n, d);
  Vector z(d);
  for (Index i = 0; i < n; ++i) {
    const double u = uniform(rng);
    std::size_t pick = components.size() - 1;
    double acc = 0.0;
    for (std::size_t c = 0; c < components.size(); ++c) {
      acc += components[c].weight;
      if (u < acc) {
        pick = c;
        break;
      }
    }
    for (Index j = 0; j < d; ++j) z(j) = normal(rng);
    const auto& m = components[pick].model;
    out.row(i) = (m.mean() + m.cholesky_lower() * z).transpose();
  }
  return Dataset(std::move(out));
}

double mixture_log_pdf(std::span<const MixtureComponent> components, const Vector& x) {
  std::vector<double> terms;
  terms.reserve(components.size());
  for (const auto& c : components) terms.push_back(std::log(c.weight) + c.model.log_pdf(x));
  return log_sum_exp(terms);
}

double gaussian_kl_closed_form(const GaussianModel& p1, const GaussianModel& p2) {
  if (p1.dim() != p2.dim()) throw Error(ErrorCode::InvalidConfig, "KL between models of different dimension");
  const Vector diff = p2.mean() - p1.mean();
  const double trace_term = (p2.precision().cwiseProduct(p1.covariance())).sum();
  const double mahalanobis = diff.dot(p2.precision() * diff);
  return 0.5 * (trace_term + mahalanobis - static_cast<double>(p1.dim()) + p2.log_det() - p1.log_det());
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace vwkde
