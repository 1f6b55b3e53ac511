#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "vwkde/scores.hpp"

using namespace vwkde;
using vwkde::test::error_of;

namespace {

GaussianScoreField field_1d(double mu, double var) {
  return GaussianScoreField(GaussianModel(Vector::Constant(1, mu), Matrix::Constant(1, 1, var)));
}

Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double step) {
  Vector g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector a = x, b = x;
    a(i) += step;
    b(i) -= step;
    g(i) = (f(a) - f(b)) / (2 * step);
  }
  return g;
}

double fd_laplacian(const std::function<double(const Vector&)>& f, const Vector& x, double step) {
  double s = 0.0;
  const double f0 = f(x);
  for (Index i = 0; i < x.size(); ++i) {
    Vector a = x, b = x;
    a(i) += step;
    b(i) -= step;
    s += (f(a) - 2 * f0 + f(b)) / (step * step);
  }
  return s;
}

}  // namespace

TEST_SUITE("scores") {

TEST_CASE("gaussian score examples") {
  const GaussianScoreField f = field_1d(0.0, 1.0);
  CHECK(f.score(test::vec({2.0}))(0) == doctest::Approx(-2.0));
  CHECK(f.score(test::vec({0.0}))(0) == 0.0);
  CHECK(f.laplacian_ratio(test::vec({0.0})) == doctest::Approx(-1.0));
  CHECK(f.laplacian_ratio(test::vec({1.0})) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(error_of([&] { f.score(test::vec({1.0, 2.0})); }) == ErrorCode::InvalidConfig);
  CHECK(error_of([&] { f.laplacian_ratio(test::vec({1.0, 2.0})); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("gaussian fields match finite differences") {
  std::mt19937_64 rng(21);
  for (Index d : {1, 5, 20}) {
    const GaussianModel m(test::random_vector(rng, d), test::random_spd(rng, d));
    const GaussianScoreField f(m);
    auto logp = [&](const Vector& x) { return m.log_pdf(x); };
    // density scaled to O(1) at the mean so the second difference keeps precision
    const double shift = m.log_pdf(m.mean());
    auto p = [&](const Vector& x) { return std::exp(m.log_pdf(x) - shift); };
    for (int t = 0; t < 10; ++t) {
      const Vector x = m.mean() + test::random_vector(rng, d, 0.7);
      const Vector fd = fd_gradient(logp, x, 1e-4);
      CHECK((f.score(x) - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
      const double lap = fd_laplacian(p, x, 1e-4) / p(x);
      CHECK(std::abs(f.laplacian_ratio(x) - lap) <= 1e-4 * std::max(1.0, std::abs(lap)));
      // laplacian_ratio = laplacian of log p + |score|^2
      CHECK(std::abs(f.laplacian_ratio(x) - (f.laplacian_log() + f.score(x).squaredNorm())) <=
            1e-10 * std::max(1.0, std::abs(f.laplacian_ratio(x))));
    }
  }
}

TEST_CASE("pair h and g") {
  auto f1 = std::make_shared<GaussianScoreField>(field_1d(0.0, 1.1 * 1.1));
  auto f2 = std::make_shared<GaussianScoreField>(field_1d(1.0, 0.9 * 0.9));
  const PairScores pair(f1, f2);
  CHECK(pair.score_difference(test::vec({0.0}))(0) == doctest::Approx(-1.2345679).epsilon(1e-6));

  const PairScores same(f1, f1);
  CHECK(same.score_difference(test::vec({0.4}))(0) == 0.0);
  CHECK(same.laplacian_difference(test::vec({0.4})) == 0.0);

  const double m = 1.7;
  const PairScores shift(std::make_shared<GaussianScoreField>(field_1d(0.0, 1.0)),
                         std::make_shared<GaussianScoreField>(field_1d(m, 1.0)));
  for (double x : {-2.0, 0.0, 0.3, 3.1}) {
    CHECK(shift.laplacian_difference(test::vec({x})) == doctest::Approx(m * x - m * m / 2).epsilon(1e-12));
  }

  for (double x : {-1.0, 0.5, 2.0}) {
    const Vector q = test::vec({x});
    CHECK(pair.swapped().score_difference(q)(0) == -pair.score_difference(q)(0));
    CHECK(pair.swapped().laplacian_difference(q) == -pair.laplacian_difference(q));
  }
}

TEST_CASE("homoscedastic pair: constant h, affine g") {
  std::mt19937_64 rng(22);
  const Index d = 6;
  const Matrix s = test::random_spd(rng, d);
  const Vector mu1 = test::random_vector(rng, d), mu2 = test::random_vector(rng, d);
  const PairScores pair(std::make_shared<GaussianScoreField>(GaussianModel(mu1, s)),
                        std::make_shared<GaussianScoreField>(GaussianModel(mu2, s)));
  const Vector expect = s.llt().solve(mu1 - mu2);
  const Vector x = test::random_vector(rng, d), y = test::random_vector(rng, d);
  CHECK((pair.score_difference(x) - expect).norm() < 1e-10);
  CHECK((pair.score_difference(y) - expect).norm() < 1e-10);
  // affine: g at the midpoint is the average
  const double gm = pair.laplacian_difference(0.5 * (x + y));
  CHECK(gm == doctest::Approx(0.5 * (pair.laplacian_difference(x) + pair.laplacian_difference(y))).epsilon(1e-10));
}

TEST_CASE("callback field") {
  const CallbackScoreField f(
      2, [](const Vector& x) { return Vector(-x); }, [](const Vector& x) { return x.squaredNorm() - 2.0; });
  CHECK(f.score(test::vec({1.0, 2.0}))(1) == -2.0);
  CHECK(f.laplacian_ratio(test::vec({1.0, 1.0})) == 0.0);
  const CallbackScoreField bad(2, [](const Vector&) { return Vector::Zero(3).eval(); }, [](const Vector&) { return 0.0; });
  CHECK(error_of([&] { bad.score(test::vec({1.0, 2.0})); }) == ErrorCode::InvalidConfig);
  auto one = std::make_shared<CallbackScoreField>(f);
  auto other = std::make_shared<GaussianScoreField>(field_1d(0.0, 1.0));
  CHECK(error_of([&] { PairScores(one, other); }) == ErrorCode::InvalidConfig);
}

}  // TEST_SUITE
