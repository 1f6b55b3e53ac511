#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "vwkde/kde.hpp"

using namespace vwkde;
using vwkde::test::error_of;

namespace {

// direct-space evaluation, no logs
double brute_kde(const Points& s, const Vector& w, double h, const Vector& x) {
  const double d = static_cast<double>(s.cols());
  double sum = 0.0;
  for (Index j = 0; j < s.rows(); ++j) {
    const double r2 = (s.row(j).transpose() - x).squaredNorm();
    sum += w(j) * std::pow(2 * M_PI * h * h, -d / 2) * std::exp(-r2 / (2 * h * h));
  }
  return sum / static_cast<double>(s.rows());
}

double trapezoid(const std::function<double(double)>& f, double a, double b, int n) {
  const double dx = (b - a) / n;
  double s = 0.5 * (f(a) + f(b));
  for (int i = 1; i < n; ++i) s += f(a + i * dx);
  return s * dx;
}

Dataset normal_1d(Index n, std::uint64_t seed) {
  return sample_gaussian(GaussianModel(Vector::Zero(1), Matrix::Identity(1, 1)), n, SeedSpec{seed});
}

}  // namespace

TEST_SUITE("kde") {

TEST_CASE("kernel examples") {
  const KernelSpec k(1.0);
  const Vector z = test::vec({0.0});
  CHECK(kernel_eval(k, z, z) == doctest::Approx(0.3989422804014327).epsilon(1e-15));
  std::mt19937_64 rng(2);
  const Vector a = test::random_vector(rng, 4), b = test::random_vector(rng, 4);
  CHECK(kernel_eval(KernelSpec(0.7), a, b) == kernel_eval(KernelSpec(0.7), b, a));
  const double mass = trapezoid([&](double t) { return kernel_eval(k, z, test::vec({t})); }, -12.0, 12.0, 20000);
  CHECK(std::abs(mass - 1.0) < 1e-6);
  CHECK(error_of([] { KernelSpec(0.0); }) == ErrorCode::InvalidConfig);
  CHECK(error_of([] { KernelSpec(-1.0); }) == ErrorCode::InvalidConfig);
  CHECK(error_of([] { KernelSpec(NAN); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("weighted kde matches direct evaluation") {
  std::mt19937_64 rng(3);
  Points s(40, 3);
  for (Index i = 0; i < s.rows(); ++i) s.row(i) = test::random_vector(rng, 3).transpose();
  Vector w(40);
  std::uniform_real_distribution<double> u(0.2, 3.0);
  for (Index i = 0; i < 40; ++i) w(i) = u(rng);
  const WeightedKde kde(Dataset(s), w, KernelSpec(0.6));
  for (int t = 0; t < 10; ++t) {
    const Vector x = test::random_vector(rng, 3);
    CHECK(kde.eval(x) == doctest::Approx(brute_kde(s, w, 0.6, x)).epsilon(1e-12));
  }
}

TEST_CASE("kde examples") {
  const WeightedKde single(Dataset(test::points_1d({0.0})), KernelSpec(1.0));
  CHECK(single.eval(test::vec({0.0})) == doctest::Approx(0.3989422804014327).epsilon(1e-15));

  const Dataset d = normal_1d(30, 4);
  const WeightedKde plain(d, KernelSpec(0.4));
  const WeightedKde ones(d, Vector::Ones(30), KernelSpec(0.4));
  const WeightedKde scaled(d, Vector::Constant(30, 3.5), KernelSpec(0.4));
  for (double x : {-1.0, 0.0, 0.3, 2.0}) {
    const Vector q = test::vec({x});
    CHECK(ones.eval(q) == plain.eval(q));
    CHECK(scaled.eval(q) == doctest::Approx(3.5 * plain.eval(q)).epsilon(1e-14));
  }
  CHECK(error_of([&] { WeightedKde(d, Vector::Ones(29), KernelSpec(0.4)); }) == ErrorCode::InvalidConfig);
  CHECK(error_of([&] { WeightedKde(d, Vector::Zero(30), KernelSpec(0.4)); }) == ErrorCode::InvalidConfig);
  CHECK(error_of([&] { plain.eval(test::vec({0.0, 1.0})); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("unweighted 1D kde integrates to one") {
  const Dataset d = normal_1d(200, 5);
  const double h = 0.3;
  const WeightedKde kde(d, KernelSpec(h));
  const double lo = d.points().minCoeff() - 6 * h, hi = d.points().maxCoeff() + 6 * h;
  const double mass = trapezoid([&](double t) { return kde.eval(test::vec({t})); }, lo, hi, 20000);
  CHECK(std::abs(mass - 1.0) < 1e-4);
}

TEST_CASE("kde is Lipschitz with the kernel gradient bound") {
  const Dataset d = normal_1d(50, 6);
  const double h = 0.5;
  const WeightedKde kde(d, Vector::Constant(50, 2.0), KernelSpec(h));
  // sup |k'| for a 1D Gaussian kernel is exp(-1/2) / (sqrt(2 pi) h^2)
  const double lip = 2.0 * std::exp(-0.5) / (std::sqrt(2 * M_PI) * h * h);
  for (double x = -3.0; x < 3.0; x += 0.37) {
    const double dx = 1e-3;
    CHECK(std::abs(kde.eval(test::vec({x})) - kde.eval(test::vec({x + dx}))) <= lip * dx * (1 + 1e-12));
  }
}

TEST_CASE("leave-one-out") {
  const WeightedKde two(Dataset(test::points_1d({0.0, 1.0})), KernelSpec(1.0));
  CHECK(two.loo_eval(0) == doctest::Approx(0.24197072451914337).epsilon(1e-14));

  std::mt19937_64 rng(7);
  Points s(25, 2);
  for (Index i = 0; i < 25; ++i) s.row(i) = test::random_vector(rng, 2).transpose();
  Vector w(25);
  for (Index i = 0; i < 25; ++i) w(i) = 0.5 + 0.1 * i;
  const Dataset d(s);
  const WeightedKde kde(d, w, KernelSpec(0.8));
  for (Index i : {0, 7, 24}) {
    Vector wr(24);
    for (Index j = 0, k = 0; j < 25; ++j)
      if (j != i) wr(k++) = w(j);
    const WeightedKde removed(d.without_row(i), wr, KernelSpec(0.8));
    CHECK(std::abs(kde.loo_eval(i) - removed.eval(d.row(i))) <= 1e-12 * removed.eval(d.row(i)));
  }
  const WeightedKde plain(d, KernelSpec(0.8));
  const WeightedKde scaled(d, Vector::Constant(25, 4.0), KernelSpec(0.8));
  CHECK(scaled.loo_eval(3) == doctest::Approx(4.0 * plain.loo_eval(3)).epsilon(1e-14));

  const WeightedKde one(Dataset(test::points_1d({0.0})), KernelSpec(1.0));
  CHECK(error_of([&] { one.loo_eval(0); }) == ErrorCode::InsufficientData);
}

TEST_CASE("loo log-likelihood") {
  const Dataset d = normal_1d(100, 8);
  const double ll = loo_log_likelihood(d, 0.4);
  double direct = 0.0;
  const WeightedKde kde(d, KernelSpec(0.4));
  for (Index i = 0; i < d.size(); ++i) direct += std::log(kde.loo_eval(i));
  CHECK(ll == doctest::Approx(direct).epsilon(1e-12));

  std::vector<Index> perm(100);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[50]);
  CHECK(loo_log_likelihood(d.select(perm), 0.4) == doctest::Approx(ll).epsilon(1e-13));

  const Dataset far(test::points_1d({0.0, 1e6}));
  // the kernel sum underflows in linear space but not in log space
  CHECK(loo_log_likelihood(far, 1e-3) < -1e17);
  // far apart but representable in log space stays finite
  CHECK(std::isfinite(loo_log_likelihood(Dataset(test::points_1d({0.0, 50.0})), 0.1)));
}

TEST_CASE("loo maximizer is Silverman order") {
  const Dataset d = normal_1d(500, 9);
  std::vector<double> grid;
  for (double h = 0.05; h <= 1.0 + 1e-12; h += 0.01) grid.push_back(h);
  const double best = select_bandwidth(d, grid, 1.0, SeedSpec{});
  const double sd = std::sqrt((d.points().array() - d.points().mean()).square().sum() / 499.0);
  const double silverman = 1.06 * sd * std::pow(500.0, -0.2);
  CHECK(best > 0.5 * silverman);
  CHECK(best < 2.0 * silverman);
}

TEST_CASE("select_bandwidth") {
  const Dataset d = normal_1d(2000, 10);
  const std::vector<double> grid = default_bandwidth_grid(d);
  CHECK(grid.size() == 30);
  CHECK(std::is_sorted(grid.begin(), grid.end()));
  CHECK(grid.back() / grid.front() == doctest::Approx(100.0));

  const auto ll = loo_log_likelihood_grid(d, grid);
  const auto argmax = std::max_element(ll.begin(), ll.end()) - ll.begin();
  CHECK(select_bandwidth(d, grid, 1.0, SeedSpec{3}) == grid[static_cast<std::size_t>(argmax)]);
  const double sub = select_bandwidth(d, grid, 0.25, SeedSpec{3});
  CHECK(sub >= grid[static_cast<std::size_t>(argmax)]);
  CHECK(select_bandwidth(d, grid, 0.25, SeedSpec{3}) == sub);

  const double only[] = {0.123};
  CHECK(select_bandwidth(d, only, 0.5, SeedSpec{}) == 0.123);
  const Dataset tiny = normal_1d(3, 1);
  CHECK(error_of([&] { select_bandwidth(tiny, grid, 0.25, SeedSpec{}); }) == ErrorCode::InsufficientData);
  CHECK(error_of([&] { select_bandwidth(d, std::vector<double>{}, 0.5, SeedSpec{}); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("ties go to the larger bandwidth") {
  // two identical grid values tie exactly; so do -inf entries
  const Dataset far(test::points_1d({0.0, 1e6, 2e6}));
  const double grid[] = {1e-4, 2e-4};
  CHECK(select_bandwidth(far, grid, 1.0, SeedSpec{}) == 2e-4);
}

TEST_CASE("pairwise distances") {
  Points a(2, 2), b(3, 2);
  a << 0, 0, 1, 1;
  b << 0, 0, 3, 4, 1, 0;
  const Matrix d = pairwise_sq_dists(a, b);
  CHECK(d(0, 1) == 25.0);
  CHECK(d(1, 2) == 1.0);
  CHECK(d(1, 0) == 2.0);
  CHECK(mean_pairwise_distance(Dataset(b)) == doctest::Approx((5.0 + 1.0 + std::sqrt(20.0)) / 3.0));
  CHECK(median_pairwise_distance(Dataset(b)) == doctest::Approx(std::sqrt(20.0)));
}

}  // TEST_SUITE
