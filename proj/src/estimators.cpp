#include "vwkde/estimators.hpp"

#include <cmath>
#include <limits>

#include "vwkde/parallel.hpp"

namespace vwkde {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

WeightedKde weighted(const Dataset& data, const AlphaFunction& alpha, double h) {
  return WeightedKde::from_log_weights(data, alpha.log_eval_rows(data.points()), KernelSpec(h));
}

}  // namespace

RatioEstimator::RatioEstimator(Dataset data1, Dataset data2, std::shared_ptr<const AlphaFunction> alpha, double h,
                               std::optional<double> gamma)
    : alpha_(alpha ? std::move(alpha) : throw Error(ErrorCode::InvalidConfig, "null weight function")),
      kde1_(weighted(data1, *alpha_, h)),
      kde2_(weighted(data2, *alpha_, h)),
      gamma_(gamma ? *gamma : static_cast<double>(data2.size()) / static_cast<double>(data1.size())) {
  if (data1.dim() != data2.dim()) throw Error(ErrorCode::InvalidConfig, "class samples differ in dimension");
  if (!(gamma_ > 0.0) || !std::isfinite(gamma_)) throw Error(ErrorCode::InvalidConfig, "gamma must be positive");
}

double plugin_posterior(double log_p1, double log_p2, double gamma) {
  if (log_p1 == -kInf && log_p2 == -kInf) {
    throw Error(ErrorCode::UndefinedPosterior, "both class densities vanish at x");
  }
  // 1 / (1 + gamma * exp(l2 - l1)), arranged to avoid overflow
  const double t = std::log(gamma) + log_p2 - log_p1;
  if (t > 0.0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

double RatioEstimator::posterior_at(const Vector& x) const {
  return plugin_posterior(kde1_.log_eval(x), kde2_.log_eval(x), gamma_);
}

double RatioEstimator::lpdr_at(const Vector& x) const {
  const double l1 = kde1_.log_eval(x);
  const double l2 = kde2_.log_eval(x);
  if (l1 == -kInf && l2 == -kInf) return std::numeric_limits<double>::quiet_NaN();
  return l1 - l2;
}

std::vector<KlEstimate> kl_estimate_grid(const Dataset& data1, const Dataset& data2, const Vector& log_weights1,
                                         const Vector& log_weights2, std::span<const double> hs) {
  if (data1.size() < 2) throw Error(ErrorCode::InsufficientData, "KL estimate needs N1 >= 2");
  if (data1.dim() != data2.dim()) throw Error(ErrorCode::InvalidConfig, "class samples differ in dimension");
  if (log_weights1.size() != data1.size() || log_weights2.size() != data2.size()) {
    throw Error(ErrorCode::InvalidConfig, "log-weight length mismatch");
  }
  if (!log_weights1.allFinite() || !log_weights2.allFinite()) {
    throw Error(ErrorCode::NumericFailure, "weight function is not finite at every sample");
  }
  std::vector<KernelSpec> kernels;
  for (double h : hs) kernels.emplace_back(h);

  const Index n1 = data1.size();
  const Index d = data1.dim();
  Matrix terms(static_cast<Index>(hs.size()), n1);
  parallel_for(static_cast<std::size_t>(n1), [&](std::size_t ui) {
    const auto i = static_cast<Index>(ui);
    thread_local std::vector<double> d11, d12;
    const double* xi = data1.points().data() + i * d;
    squared_distances(xi, data1.points(), d11);
    squared_distances(xi, data2.points(), d12);
    for (std::size_t g = 0; g < hs.size(); ++g) {
      const double l1 = log_density_from_distances(d11, log_weights1, kernels[g], d, i);
      const double l2 = log_density_from_distances(d12, log_weights2, kernels[g], d);
      terms(static_cast<Index>(g), i) = l1 - l2;
    }
  });

  std::vector<KlEstimate> out(hs.size());
  for (std::size_t g = 0; g < hs.size(); ++g) {
    double s = 0.0;
    Index used = 0;
    for (Index i = 0; i < n1; ++i) {
      const double t = terms(static_cast<Index>(g), i);
      if (std::isfinite(t)) {
        s += t;
        ++used;
      } else {
        ++out[g].flagged_terms;
      }
    }
    out[g].value = used > 0 ? s / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

std::vector<KlEstimate> kl_estimate_grid(const Dataset& data1, const Dataset& data2, const AlphaFunction& alpha,
                                         std::span<const double> hs) {
  return kl_estimate_grid(data1, data2, alpha.log_eval_rows(data1.points()), alpha.log_eval_rows(data2.points()),
                          hs);
}

KlEstimate kl_estimate(const Dataset& data1, const Dataset& data2, const AlphaFunction& alpha, double h) {
  const double hs[] = {h};
  return kl_estimate_grid(data1, data2, alpha, hs).front();
}

}  // namespace vwkde
