#include "vwkde/kde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "vwkde/parallel.hpp"

namespace vwkde {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double sq_dist(const double* a, const double* b, Index d) {
  double s = 0.0;
  for (Index k = 0; k < d; ++k) {
    const double t = a[k] - b[k];
    s += t * t;
  }
  return s;
}

std::vector<Index> strided_rows(Index n, Index max_points) {
  const Index m = std::min(n, max_points);
  std::vector<Index> rows(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) rows[static_cast<std::size_t>(i)] = (i * n) / m;
  return rows;
}

std::vector<double> pairwise_distances(const Dataset& data, Index max_points) {
  const auto rows = strided_rows(data.size(), max_points);
  std::vector<double> out;
  out.reserve(rows.size() * (rows.size() - 1) / 2);
  const Index d = data.dim();
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = a + 1; b < rows.size(); ++b)
      out.push_back(std::sqrt(sq_dist(data.points().data() + rows[a] * d, data.points().data() + rows[b] * d, d)));
  if (out.empty()) throw Error(ErrorCode::InsufficientData, "need at least two points for pairwise distances");
  return out;
}

}  // namespace

KernelSpec::KernelSpec(double bandwidth) : h_(bandwidth) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw Error(ErrorCode::InvalidConfig, "bandwidth must be positive and finite");
  }
}

double KernelSpec::log_normalizer(Index dim) const {
  return -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi * h_ * h_);
}

double kernel_log_eval(const KernelSpec& kernel, const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw Error(ErrorCode::InvalidConfig, "kernel arguments differ in dimension");
  const double h = kernel.bandwidth();
  return kernel.log_normalizer(x.size()) - (x - y).squaredNorm() / (2.0 * h * h);
}

double kernel_eval(const KernelSpec& kernel, const Vector& x, const Vector& y) {
  return std::exp(kernel_log_eval(kernel, x, y));
}

WeightedKde::WeightedKde(Dataset support, KernelSpec kernel)
    : WeightedKde(std::move(support), Vector(), kernel, 0) {}

WeightedKde::WeightedKde(Dataset support, const Vector& weights, KernelSpec kernel)
    : support_(std::move(support)), kernel_(kernel) {
  if (weights.size() != support_.size()) throw Error(ErrorCode::InvalidConfig, "weights length must equal N");
  if ((weights.array() <= 0.0).any() || !weights.allFinite()) {
    throw Error(ErrorCode::InvalidConfig, "weights must be positive and finite");
  }
  log_weights_ = weights.array().log().matrix();
}

WeightedKde::WeightedKde(Dataset support, Vector log_weights, KernelSpec kernel, int)
    : support_(std::move(support)), log_weights_(std::move(log_weights)), kernel_(kernel) {
  if (log_weights_.size() == 0) log_weights_ = Vector::Zero(support_.size());
}

WeightedKde WeightedKde::from_log_weights(Dataset support, Vector log_weights, KernelSpec kernel) {
  if (log_weights.size() != support.size()) throw Error(ErrorCode::InvalidConfig, "weights length must equal N");
  if (!log_weights.allFinite()) throw Error(ErrorCode::InvalidConfig, "log-weights must be finite");
  return WeightedKde(std::move(support), std::move(log_weights), kernel, 0);
}

double log_kernel_sum(std::span<const double> sq_dist, const Vector& log_weights, double h, Index skip) {
  const double scale = 1.0 / (2.0 * h * h);
  const std::size_t n = sq_dist.size();
  const auto skipped = static_cast<std::size_t>(skip);
  double m = kNegInf;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == skipped) continue;
    m = std::max(m, log_weights[static_cast<Index>(j)] - sq_dist[j] * scale);
  }
  if (!std::isfinite(m)) return kNegInf;
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == skipped) continue;
    s += std::exp(log_weights[static_cast<Index>(j)] - sq_dist[j] * scale - m);
  }
  return m + std::log(s);
}

void squared_distances(const double* x, const Points& support, std::vector<double>& out) {
  const Index n = support.rows();
  const Index d = support.cols();
  out.resize(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = sq_dist(x, support.data() + j * d, d);
}

double log_density_from_distances(std::span<const double> sq_dist, const Vector& log_weights, const KernelSpec& kernel,
                                  Index dim, Index skip) {
  const auto count = static_cast<double>(sq_dist.size()) - (skip >= 0 ? 1.0 : 0.0);
  return log_kernel_sum(sq_dist, log_weights, kernel.bandwidth(), skip) - std::log(count) +
         kernel.log_normalizer(dim);
}

double WeightedKde::log_eval(const Vector& x) const {
  if (x.size() != support_.dim()) throw Error(ErrorCode::InvalidConfig, "query dimension mismatch");
  thread_local std::vector<double> dist;
  squared_distances(x.data(), support_.points(), dist);
  return log_density_from_distances(dist, log_weights_, kernel_, support_.dim());
}

double WeightedKde::eval(const Vector& x) const { return std::exp(log_eval(x)); }

double WeightedKde::loo_log_eval(Index i) const {
  if (support_.size() < 2) throw Error(ErrorCode::InsufficientData, "leave-one-out needs N >= 2");
  if (i < 0 || i >= support_.size()) throw Error(ErrorCode::InvalidConfig, "support index out of range");
  thread_local std::vector<double> dist;
  squared_distances(support_.points().data() + i * support_.dim(), support_.points(), dist);
  return log_density_from_distances(dist, log_weights_, kernel_, support_.dim(), i);
}

double WeightedKde::loo_eval(Index i) const { return std::exp(loo_log_eval(i)); }

Matrix pairwise_sq_dists(const Points& a, const Points& b) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::InvalidConfig, "dimension mismatch");
  Matrix out(a.rows(), b.rows());
  const Index d = a.cols();
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.rows(); ++j) out(i, j) = sq_dist(a.data() + i * d, b.data() + j * d, d);
  return out;
}

std::vector<double> loo_log_likelihood_grid(const Dataset& data, std::span<const double> grid) {
  if (data.size() < 2) throw Error(ErrorCode::InsufficientData, "LOO log-likelihood needs N >= 2");
  std::vector<double> log_norm;
  for (double h : grid) log_norm.push_back(KernelSpec(h).log_normalizer(data.dim()));
  const Index n = data.size();
  const Vector zero = Vector::Zero(n);
  const double log_count = std::log(static_cast<double>(n - 1));
  // per-point terms, summed afterwards in index order
  Matrix terms(static_cast<Index>(grid.size()), n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t ui) {
    const auto i = static_cast<Index>(ui);
    thread_local std::vector<double> dist;
    squared_distances(data.points().data() + i * data.dim(), data.points(), dist);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      terms(static_cast<Index>(g), i) = log_kernel_sum(dist, zero, grid[g], i) - log_count + log_norm[g];
    }
  });
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) s += terms(static_cast<Index>(g), i);
    out[g] = std::isfinite(s) ? s : kNegInf;
  }
  return out;
}

double loo_log_likelihood(const Dataset& data, double h) {
  const double grid[] = {h};
  return loo_log_likelihood_grid(data, grid).front();
}

double select_bandwidth(const Dataset& data, std::span<const double> grid, double subsample_fraction,
                        SeedSpec seed) {
  if (grid.empty()) throw Error(ErrorCode::InvalidConfig, "bandwidth grid is empty");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "subsample fraction must lie in (0, 1]");
  }
  const Index n = data.size();
  const auto m = static_cast<Index>(std::ceil(subsample_fraction * static_cast<double>(n) - 1e-9));
  if (m < 2) throw Error(ErrorCode::InsufficientData, "bandwidth subsample has fewer than 2 points");

  std::vector<Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  if (m < n) {
    auto rng = seed.engine();
    // partial Fisher-Yates
    for (Index i = 0; i < m; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(pick(rng))]);
    }
    rows.resize(static_cast<std::size_t>(m));
  }
  const Dataset sub = m < n ? data.select(rows) : data;
  const auto ll = loo_log_likelihood_grid(sub, grid);
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (ll[g] > ll[best] || (ll[g] == ll[best] && grid[g] > grid[best])) best = g;
  }
  return grid[best];
}

double mean_pairwise_distance(const Dataset& data, Index max_points) {
  const auto d = pairwise_distances(data, max_points);
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double median_pairwise_distance(const Dataset& data, Index max_points) {
  auto d = pairwise_distances(data, max_points);
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  if (d.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(d.begin(), mid);
  return 0.5 * (lower + upper);
}

std::vector<double> default_bandwidth_grid(const Dataset& data, std::size_t count, double lo, double hi) {
  if (count < 1 || !(lo > 0.0) || !(hi >= lo)) throw Error(ErrorCode::InvalidConfig, "bad bandwidth grid spec");
  const double scale = mean_pairwise_distance(data) / std::sqrt(static_cast<double>(data.dim()));
  if (!(scale > 0.0)) throw Error(ErrorCode::DegenerateModel, "all points coincide; no bandwidth scale");
  std::vector<double> grid(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    grid[i] = scale * lo * std::pow(hi / lo, t);
  }
  return grid;
}

}  // namespace vwkde
