#pragma once

#include <functional>
#include <memory>

#include "vwkde/core.hpp"

namespace vwkde {

/// Source of first- and second-order density information for one class:
/// score(x) = grad log p(x), laplacian_ratio(x) = (laplacian p)(x) / p(x).
///
/// This is the seam between the weight fit and whatever model supplies the
/// derivatives; a learned score model plugs in here unchanged.
class ScoreField {
 public:
  virtual ~ScoreField() = default;

  virtual Index dim() const = 0;
  virtual Vector score(const Vector& x) const = 0;
  virtual double laplacian_ratio(const Vector& x) const = 0;
};

/// Analytic derivatives of a fitted Gaussian:
///   score(x)           = -P (x - mu)
///   laplacian_ratio(x) = (x - mu)^T P P (x - mu) - tr(P)
/// with P the precision matrix.
class GaussianScoreField final : public ScoreField {
 public:
  explicit GaussianScoreField(GaussianModel model);

  const GaussianModel& model() const { return model_; }

  Index dim() const override { return model_.dim(); }
  Vector score(const Vector& x) const override;
  double laplacian_ratio(const Vector& x) const override;
  /// Laplacian of log p; constant for a Gaussian.
  double laplacian_log() const { return -trace_precision_; }

 private:
  GaussianModel model_;
  double trace_precision_;
};

/// Score field backed by user callables (e.g. a Python score model).
class CallbackScoreField final : public ScoreField {
 public:
  using ScoreFn = std::function<Vector(const Vector&)>;
  using LaplacianFn = std::function<double(const Vector&)>;

  CallbackScoreField(Index dim, ScoreFn score, LaplacianFn laplacian_ratio);

  Index dim() const override { return dim_; }
  Vector score(const Vector& x) const override;
  double laplacian_ratio(const Vector& x) const override;

 private:
  Index dim_;
  ScoreFn score_;
  LaplacianFn laplacian_;
};

/// Score fields of the two classes, combined into the two quantities the
/// leading-order ratio bias depends on.
class PairScores {
 public:
  PairScores(std::shared_ptr<const ScoreField> first, std::shared_ptr<const ScoreField> second);

  Index dim() const { return first_->dim(); }
  const ScoreField& first() const { return *first_; }
  const ScoreField& second() const { return *second_; }

  /// grad log p1 - grad log p2.
  Vector score_difference(const Vector& x) const;
  /// (lap p1 / p1 - lap p2 / p2) / 2.
  double laplacian_difference(const Vector& x) const;

  PairScores swapped() const { return PairScores(second_, first_); }

 private:
  std::shared_ptr<const ScoreField> first_;
  std::shared_ptr<const ScoreField> second_;
};

/// Gaussian fits of both samples wrapped as a score pair (the model-based path).
PairScores gaussian_pair_scores(const Dataset& data1, const Dataset& data2,
                                std::optional<double> shrinkage = std::nullopt);

}  // namespace vwkde
