#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

#include "vwkde/core.hpp"
#include "vwkde/scores.hpp"

namespace vwkde {

/// Positive weight function alpha(x) shared by both class KDEs.
class AlphaFunction {
 public:
  virtual ~AlphaFunction() = default;

  virtual double log_eval(const Vector& x) const = 0;
  virtual Vector grad_log(const Vector& x) const = 0;

  double eval(const Vector& x) const;
  /// log alpha at every row of `x`.
  virtual Vector log_eval_rows(const Points& x) const;
};

/// alpha(x) = c. Reproduces the ordinary KDE ratio.
class ConstantAlpha final : public AlphaFunction {
 public:
  explicit ConstantAlpha(double c = 1.0);

  double value() const { return c_; }
  double log_eval(const Vector&) const override { return log_c_; }
  Vector grad_log(const Vector& x) const override { return Vector::Zero(x.size()); }
  Vector log_eval_rows(const Points& x) const override { return Vector::Constant(x.rows(), log_c_); }

 private:
  double c_;
  double log_c_;
};

/// alpha(x) = exp(-(x - m)^T A (x - m) / 2), the closed-form zero-bias weight
/// for two Gaussians with a shared covariance S:
///   m = (mu1 + mu2) / 2,  a = S^-1 (mu1 - mu2),
///   A = b (I - a a^T / |a|^2) - S^-1.
/// Every b gives zero leading-order bias; b only acts orthogonally to a.
class AnalyticHomoscedasticAlpha final : public AlphaFunction {
 public:
  AnalyticHomoscedasticAlpha(Vector center, Matrix curvature, double b);

  const Vector& center() const { return center_; }
  const Matrix& curvature() const { return curvature_; }
  double b() const { return b_; }

  double log_eval(const Vector& x) const override;
  Vector grad_log(const Vector& x) const override;

 private:
  Vector center_;
  Matrix curvature_;
  double b_;
};

AnalyticHomoscedasticAlpha analytic_alpha(const Vector& mu1, const Vector& mu2, const Matrix& shared_covariance,
                                          double b = 0.0);

/// log alpha(x) = sum_k theta_k exp(-|x - x_k|^2 / (2 sigma^2)).
class RkhsLogAlpha final : public AlphaFunction {
 public:
  RkhsLogAlpha(Points basis, Vector theta, double sigma);

  const Points& basis() const { return basis_; }
  const Vector& theta() const { return theta_; }
  double sigma() const { return sigma_; }
  Index basis_size() const { return basis_.rows(); }

  double log_eval(const Vector& x) const override;
  Vector grad_log(const Vector& x) const override;
  Vector log_eval_rows(const Points& x) const override;

  /// CSV: a "# sigma=<value>" line, then one row per basis point with theta
  /// appended as the last column.
  void save_csv(const std::filesystem::path& path) const;
  static RkhsLogAlpha load_csv(const std::filesystem::path& path);

 private:
  Points basis_;
  Vector theta_;
  double sigma_;
};

using SampleWeightFn = std::function<double(const Vector&)>;

struct RkhsFitOptions {
  /// Basis kernel width; median pairwise distance of the pooled sample if unset.
  std::optional<double> sigma;
  /// l2 penalty on theta; 1e-3 * (N1 + N2) if unset.
  std::optional<double> lambda;
  Index max_basis = 3000;
  /// Drives the basis subsample when N1 + N2 > max_basis.
  SeedSpec seed{};
  /// Optional non-negative per-sample weight r(x) on the squared-bias sum.
  SampleWeightFn sample_weight;
};

/// The regularized quadratic in theta:
///   L(theta) = sum_i r_i [ (phi_i . theta)^2 / 2 + (phi_i . theta) g_i ] + lambda |theta|^2
/// where phi_i . theta = grad log alpha(x_i) . (score difference at x_i) and
/// g_i is the half Laplacian-ratio difference at x_i.
struct RkhsProblem {
  Points samples;
  Points basis;
  double sigma = 1.0;
  double lambda = 0.0;
  /// N x M, row i holds grad_x kappa(x_i, basis_k) . score_difference(x_i).
  Matrix design;
  Vector target;
  Vector sample_weights;

  double objective(const Vector& theta) const;
  Vector gradient(const Vector& theta) const;
  /// G + 2 lambda I with G = design^T R design.
  Matrix normal_matrix() const;
  /// c = design^T R target.
  Vector linear_term() const;
};

RkhsProblem build_rkhs_problem(const Dataset& data1, const Dataset& data2, const PairScores& pair,
                               const RkhsFitOptions& options = {});

struct RkhsFit {
  RkhsLogAlpha alpha;
  double objective = 0.0;
  /// |(G + 2 lambda I) theta + c|
  double stationarity_residual = 0.0;
  double linear_term_norm = 0.0;
  double sigma = 0.0;
  double lambda = 0.0;
};

RkhsFit solve_rkhs_problem(const RkhsProblem& problem);

RkhsFit fit_rkhs_alpha(const Dataset& data1, const Dataset& data2, const PairScores& pair,
                       const RkhsFitOptions& options = {});

/// Model-based weight: Gaussian score fields fitted to each sample, then the
/// RKHS quadratic fit.
RkhsFit fit_model_based_alpha(const Dataset& data1, const Dataset& data2, const RkhsFitOptions& options = {});

/// Leading-order bias functional grad log alpha . score_difference + laplacian_difference.
double pointwise_bias(const AlphaFunction& alpha, const PairScores& pair, const Vector& x);

/// Central-difference divergence of r(x) * bias(x) * score_difference(x).
/// Vanishes wherever the weight satisfies the Euler-Lagrange condition.
double el_residual(const AlphaFunction& alpha, const PairScores& pair, const SampleWeightFn& r, const Vector& x,
                   double step);

}  // namespace vwkde
