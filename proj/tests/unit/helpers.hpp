#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include "vwkde/core.hpp"

namespace vwkde::test {

template <typename F>
std::optional<ErrorCode> error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline Points points_1d(std::initializer_list<double> xs) {
  Points p(static_cast<Index>(xs.size()), 1);
  Index i = 0;
  for (double x : xs) p(i++, 0) = x;
  return p;
}

inline Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

inline Vector random_vector(std::mt19937_64& rng, Index d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = n(rng);
  return v;
}

/// Random SPD matrix with eigenvalues in roughly [0.5, 2].
inline Matrix random_spd(std::mt19937_64& rng, Index d) {
  Matrix a(d, d);
  std::normal_distribution<double> n;
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) a(i, j) = n(rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  const Matrix q = qr.householderQ();
  std::uniform_real_distribution<double> u(0.5, 2.0);
  Vector ev(d);
  for (Index i = 0; i < d; ++i) ev(i) = u(rng);
  Matrix s = q * ev.asDiagonal() * q.transpose();
  return 0.5 * (s + s.transpose());
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("vwkde_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace vwkde::test
