#include "vwkde/scores.hpp"

namespace vwkde {

namespace {

void check_dim(const Vector& x, Index d) {
  if (x.size() != d) throw Error(ErrorCode::InvalidConfig, "point dimension does not match score field");
}

}  // namespace

GaussianScoreField::GaussianScoreField(GaussianModel model)
    : model_(std::move(model)), trace_precision_(model_.precision().trace()) {}

Vector GaussianScoreField::score(const Vector& x) const {
  check_dim(x, dim());
  return -(model_.precision() * (x - model_.mean()));
}

double GaussianScoreField::laplacian_ratio(const Vector& x) const {
  check_dim(x, dim());
  const Vector s = model_.precision() * (x - model_.mean());
  return s.squaredNorm() - trace_precision_;
}

CallbackScoreField::CallbackScoreField(Index dim, ScoreFn score, LaplacianFn laplacian_ratio)
    : dim_(dim), score_(std::move(score)), laplacian_(std::move(laplacian_ratio)) {
  if (dim_ < 1 || !score_ || !laplacian_) throw Error(ErrorCode::InvalidConfig, "incomplete callback score field");
}

Vector CallbackScoreField::score(const Vector& x) const {
  check_dim(x, dim_);
  Vector s = score_(x);
  if (s.size() != dim_) throw Error(ErrorCode::InvalidConfig, "score callback returned wrong dimension");
  return s;
}

double CallbackScoreField::laplacian_ratio(const Vector& x) const {
  check_dim(x, dim_);
  return laplacian_(x);
}

PairScores::PairScores(std::shared_ptr<const ScoreField> first, std::shared_ptr<const ScoreField> second)
    : first_(std::move(first)), second_(std::move(second)) {
  if (!first_ || !second_) throw Error(ErrorCode::InvalidConfig, "null score field");
  if (first_->dim() != second_->dim()) throw Error(ErrorCode::InvalidConfig, "score fields differ in dimension");
}

Vector PairScores::score_difference(const Vector& x) const { return first_->score(x) - second_->score(x); }

double PairScores::laplacian_difference(const Vector& x) const {
  return 0.5 * (first_->laplacian_ratio(x) - second_->laplacian_ratio(x));
}

PairScores gaussian_pair_scores(const Dataset& data1, const Dataset& data2, std::optional<double> shrinkage) {
  return PairScores(std::make_shared<GaussianScoreField>(fit_gaussian(data1, shrinkage)),
                    std::make_shared<GaussianScoreField>(fit_gaussian(data2, shrinkage)));
}

}  // namespace vwkde
