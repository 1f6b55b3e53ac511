#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "vwkde/error.hpp"

namespace vwkde {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// N x D sample matrix, one point per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Seed for one reproducible random stream. Sub-streams are derived by a
/// counter so that trial i of a run never depends on how many draws trial
/// i-1 consumed.
struct SeedSpec {
  std::uint64_t master = 0;

  SeedSpec derive(std::uint64_t index) const;
  std::mt19937_64 engine() const { return std::mt19937_64(master); }
};

std::uint64_t splitmix64(std::uint64_t x);

/// Ordered collection of D-dimensional points drawn from one distribution.
class Dataset {
 public:
  explicit Dataset(Points points, std::optional<int> label = std::nullopt);

  Index size() const { return points_.rows(); }
  Index dim() const { return points_.cols(); }
  const Points& points() const { return points_; }
  Vector row(Index i) const { return points_.row(i).transpose(); }
  std::span<const double> row_span(Index i) const {
    return {points_.data() + i * points_.cols(), static_cast<std::size_t>(points_.cols())};
  }
  std::optional<int> label() const { return label_; }

  Dataset without_row(Index i) const;
  Dataset select(std::span<const Index> rows) const;
  static Dataset concat(const Dataset& a, const Dataset& b);

 private:
  Points points_;
  std::optional<int> label_;
};

/// Mean/covariance pair with cached Cholesky factor, precision and log-determinant.
class GaussianModel {
 public:
  GaussianModel(Vector mean, Matrix covariance);

  Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return covariance_; }
  const Matrix& precision() const { return precision_; }
  /// Lower-triangular L with L L^T = covariance.
  const Matrix& cholesky_lower() const { return lower_; }
  double log_det() const { return log_det_; }

  double log_pdf(const Vector& x) const;

 private:
  Vector mean_;
  Matrix covariance_;
  Matrix precision_;
  Matrix lower_;
  double log_det_ = 0.0;
};

/// Fits mean and unbiased covariance plus `shrinkage * I`. Without an explicit
/// shrinkage the ridge is 1e-6 * trace(S) / D.
GaussianModel fit_gaussian(const Dataset& data, std::optional<double> shrinkage = std::nullopt);

/// Shared covariance of two samples, each centred on its own mean
/// (divisor N1 + N2 - 2), with the same ridge rule as fit_gaussian.
Matrix pooled_covariance(const Dataset& data1, const Dataset& data2,
                         std::optional<double> shrinkage = std::nullopt);

Dataset sample_gaussian(const GaussianModel& model, Index n, SeedSpec seed);

struct MixtureComponent {
  double weight;
  GaussianModel model;
};

Dataset sample_mixture(std::span<const MixtureComponent> components, Index n, SeedSpec seed);
double mixture_log_pdf(std::span<const MixtureComponent> components, const Vector& x);

/// KL(p1 || p2) for two Gaussians.
double gaussian_kl_closed_form(const GaussianModel& p1, const GaussianModel& p2);

double log_sum_exp(std::span<const double> values);

}  // namespace vwkde
