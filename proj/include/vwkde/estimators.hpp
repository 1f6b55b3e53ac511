#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "vwkde/kde.hpp"
#include "vwkde/weight.hpp"

namespace vwkde {

/// Two weighted KDEs that share one bandwidth and one weight function, plus
/// the class-prior ratio gamma = P(y=2) / P(y=1).
class RatioEstimator {
 public:
  /// gamma defaults to N2 / N1.
  RatioEstimator(Dataset data1, Dataset data2, std::shared_ptr<const AlphaFunction> alpha, double h,
                 std::optional<double> gamma = std::nullopt);

  const WeightedKde& kde1() const { return kde1_; }
  const WeightedKde& kde2() const { return kde2_; }
  const AlphaFunction& alpha() const { return *alpha_; }
  double gamma() const { return gamma_; }

  /// p1 / (p1 + gamma p2). Throws UndefinedPosterior if both densities
  /// vanish even in log space.
  double posterior_at(const Vector& x) const;
  /// log p1(x) - log p2(x); +/-inf when one side is not representable.
  double lpdr_at(const Vector& x) const;

 private:
  std::shared_ptr<const AlphaFunction> alpha_;
  WeightedKde kde1_;
  WeightedKde kde2_;
  double gamma_;
};

/// p1 / (p1 + gamma p2) from log densities.
double plugin_posterior(double log_p1, double log_p2, double gamma);

struct KlEstimate {
  double value = 0.0;
  /// Terms whose log-ratio was not finite; excluded from the average.
  Index flagged_terms = 0;
};

/// (1/N1) sum_i log[ p1_{-i}(x_i) / p2(x_i) ] over x_i in data1, with the
/// numerator leaving x_i out and the denominator using all of data2.
KlEstimate kl_estimate(const Dataset& data1, const Dataset& data2, const AlphaFunction& alpha, double h);

/// kl_estimate for every h, sharing distances and weights.
std::vector<KlEstimate> kl_estimate_grid(const Dataset& data1, const Dataset& data2, const AlphaFunction& alpha,
                                         std::span<const double> hs);

/// Same, from precomputed log-weights of both samples.
std::vector<KlEstimate> kl_estimate_grid(const Dataset& data1, const Dataset& data2, const Vector& log_weights1,
                                         const Vector& log_weights2, std::span<const double> hs);

}  // namespace vwkde
