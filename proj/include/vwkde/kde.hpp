#pragma once

#include <span>
#include <vector>

#include "vwkde/core.hpp"

namespace vwkde {

/// Isotropic, normalized Gaussian kernel of bandwidth h.
class KernelSpec {
 public:
  explicit KernelSpec(double bandwidth);

  double bandwidth() const { return h_; }
  /// log of the normalizing constant (2 pi h^2)^(-D/2).
  double log_normalizer(Index dim) const;

 private:
  double h_;
};

double kernel_eval(const KernelSpec& kernel, const Vector& x, const Vector& y);
double kernel_log_eval(const KernelSpec& kernel, const Vector& x, const Vector& y);

/// Kernel density estimate with a positive weight per support point:
///   p(x) = (1/N) sum_j w_j k_h(x, x_j).
/// Weights are held in log space so that very large or very small weights
/// (and high-dimensional kernels) never under/overflow.
class WeightedKde {
 public:
  /// Unit weights.
  WeightedKde(Dataset support, KernelSpec kernel);
  WeightedKde(Dataset support, const Vector& weights, KernelSpec kernel);
  static WeightedKde from_log_weights(Dataset support, Vector log_weights, KernelSpec kernel);

  const Dataset& support() const { return support_; }
  const KernelSpec& kernel() const { return kernel_; }
  const Vector& log_weights() const { return log_weights_; }
  Vector weights() const { return log_weights_.array().exp().matrix(); }

  double log_eval(const Vector& x) const;
  double eval(const Vector& x) const;
  /// Density at support point i with that point excluded (divisor N - 1).
  double loo_log_eval(Index i) const;
  double loo_eval(Index i) const;

 private:
  WeightedKde(Dataset support, Vector log_weights, KernelSpec kernel, int);

  Dataset support_;
  Vector log_weights_;
  KernelSpec kernel_;
};

/// Row-by-row squared Euclidean distances (exact, no norm-expansion trick).
Matrix pairwise_sq_dists(const Points& a, const Points& b);

/// log sum_{j != skip} exp(log_w[j] - sq_dist[j] / (2 h^2)).
/// Pass skip = -1 to keep every term.
double log_kernel_sum(std::span<const double> sq_dist, const Vector& log_weights, double h, Index skip = -1);

/// Squared distances from the point at `x` to every row of `support`.
void squared_distances(const double* x, const Points& support, std::vector<double>& out);

/// log[(1/count) sum_j w_j k_h] from precomputed squared distances, where
/// count is N, or N - 1 when a row is skipped. Every density evaluation in
/// the library goes through here.
double log_density_from_distances(std::span<const double> sq_dist, const Vector& log_weights, const KernelSpec& kernel,
                                  Index dim, Index skip = -1);

/// Sum over i of log p_{-i}(x_i), unit weights. Returns -inf only when a term
/// is not representable even in log space (e.g. h so small that
/// distance^2 / h^2 overflows).
double loo_log_likelihood(const Dataset& data, double h);
/// Same quantity for every bandwidth in `grid`, sharing the distance matrix.
std::vector<double> loo_log_likelihood_grid(const Dataset& data, std::span<const double> grid);

/// Grid bandwidth maximizing the LOO log-likelihood of a random subsample of
/// ceil(fraction * N) points. Ties go to the larger h.
double select_bandwidth(const Dataset& data, std::span<const double> grid, double subsample_fraction,
                        SeedSpec seed);

/// count log-spaced values over [lo, hi] * scale, where scale is the mean
/// pairwise distance divided by sqrt(D).
std::vector<double> default_bandwidth_grid(const Dataset& data, std::size_t count = 30, double lo = 0.05,
                                           double hi = 5.0);

/// Mean and median of pairwise distances over at most `max_points` rows taken
/// at an even stride.
double mean_pairwise_distance(const Dataset& data, Index max_points = 2000);
double median_pairwise_distance(const Dataset& data, Index max_points = 2000);

}  // namespace vwkde
