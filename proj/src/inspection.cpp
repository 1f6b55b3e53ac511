#include "vwkde/inspection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

#include "vwkde/estimators.hpp"
#include "vwkde/kde.hpp"
#include "vwkde/parallel.hpp"

namespace vwkde {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void parse_fail(std::size_t offset, const std::string& what) {
  throw Error(ErrorCode::Parse, "PGM byte " + std::to_string(offset) + ": " + what);
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

// Skips whitespace and '#' comments, then reads an unsigned decimal.
long read_header_int(std::span<const unsigned char> b, std::size_t& pos, const char* what) {
  while (pos < b.size()) {
    if (is_space(b[pos])) {
      ++pos;
    } else if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n' && b[pos] != '\r') ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size()) parse_fail(pos, std::string("header ends before ") + what);
  if (b[pos] < '0' || b[pos] > '9') parse_fail(pos, std::string("expected ") + what);
  long v = 0;
  while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
    v = v * 10 + (b[pos] - '0');
    if (v > 1L << 30) parse_fail(pos, std::string(what) + " is too large");
    ++pos;
  }
  return v;
}

}  // namespace

GrayImage::GrayImage(Index w, Index h, int maxv)
    : width(w), height(h), max_value(maxv), pixels(static_cast<std::size_t>(w * h), 0) {
  if (w < 1 || h < 1) throw Error(ErrorCode::InvalidData, "image dimensions must be positive");
  if (maxv < 1 || maxv > 65535) throw Error(ErrorCode::InvalidData, "max value must lie in [1, 65535]");
}

GrayImage parse_pgm(std::span<const unsigned char> b) {
  if (b.size() < 2 || b[0] != 'P') parse_fail(0, "missing PGM magic");
  if (b[1] != '5') parse_fail(1, std::string("unsupported PGM variant P") + static_cast<char>(b[1]) + " (only P5)");
  std::size_t pos = 2;
  if (pos >= b.size() || !is_space(b[pos])) parse_fail(pos, "expected whitespace after magic");
  const long w = read_header_int(b, pos, "width");
  const long h = read_header_int(b, pos, "height");
  const long maxv = read_header_int(b, pos, "max value");
  if (w < 1 || h < 1) parse_fail(pos, "image dimensions must be positive");
  if (maxv < 1 || maxv > 65535) parse_fail(pos, "max value must lie in [1, 65535]");
  if (pos >= b.size() || !is_space(b[pos])) parse_fail(pos, "expected single whitespace before raster");
  ++pos;
  GrayImage img(w, h, static_cast<int>(maxv));
  const std::size_t bytes_per = maxv > 255 ? 2 : 1;
  const std::size_t need = img.pixels.size() * bytes_per;
  if (b.size() - pos < need) parse_fail(b.size(), "truncated raster: need " + std::to_string(need) + " bytes");
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const std::size_t at = pos + i * bytes_per;
    const unsigned v = bytes_per == 2 ? (static_cast<unsigned>(b[at]) << 8) | b[at + 1] : b[at];
    if (v > static_cast<unsigned>(maxv)) parse_fail(at, "intensity exceeds max value");
    img.pixels[i] = static_cast<std::uint16_t>(v);
  }
  return img;
}

GrayImage load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open image " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return parse_pgm(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

void save_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open image for writing: " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << '\n' << img.max_value << '\n';
  const bool wide = img.max_value > 255;
  for (std::uint16_t v : img.pixels) {
    if (wide) out.put(static_cast<char>(v >> 8));
    out.put(static_cast<char>(v & 0xff));
  }
  if (!out) throw Error(ErrorCode::Io, "failed writing image " + path.string());
}

PatchSet extract_patches(const GrayImage& img, Index size, Index stride) {
  if (size < 1 || stride < 1) throw Error(ErrorCode::InvalidConfig, "patch size and stride must be positive");
  if (img.width < size || img.height < size) {
    throw Error(ErrorCode::InvalidData, "image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                            " is smaller than the patch size " + std::to_string(size));
  }
  PatchSet set;
  set.size = size;
  for (Index r = 0; r + size <= img.height; r += stride) {
    for (Index c = 0; c + size <= img.width; c += stride) {
      Matrix p(size, size);
      for (Index i = 0; i < size; ++i)
        for (Index j = 0; j < size; ++j) p(i, j) = img.at(r + i, c + j);
      set.origins.push_back({r, c});
      set.patches.push_back(std::move(p));
    }
  }
  return set;
}

namespace {

// 'valid' 3x3 correlation
Matrix filter3(const Matrix& in, const Eigen::Matrix3d& k) {
  Matrix out(in.rows() - 2, in.cols() - 2);
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j) out(i, j) = (in.block<3, 3>(i, j).array() * k.array()).sum();
  return out;
}

}  // namespace

Eigen::Vector4d patch_features(const Matrix& patch) {
  if (patch.rows() < 5 || patch.cols() < 5) throw Error(ErrorCode::InvalidData, "patch must be at least 5x5");
  Eigen::Matrix3d blur;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) blur(i, j) = std::exp(-0.5 * ((i - 1) * (i - 1) + (j - 1) * (j - 1)));
  blur /= blur.sum();
  const Matrix smooth = filter3(patch, blur);
  // Scharr written as differences so flat regions give exactly zero
  const Index r = smooth.rows() - 2, q = smooth.cols() - 2;
  Matrix gx(r, q), gy(r, q);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < q; ++j) {
      gx(i, j) = 3.0 * (smooth(i, j + 2) - smooth(i, j)) + 10.0 * (smooth(i + 1, j + 2) - smooth(i + 1, j)) +
                 3.0 * (smooth(i + 2, j + 2) - smooth(i + 2, j));
      gy(i, j) = 3.0 * (smooth(i + 2, j) - smooth(i, j)) + 10.0 * (smooth(i + 2, j + 1) - smooth(i, j + 1)) +
                 3.0 * (smooth(i + 2, j + 2) - smooth(i, j + 2));
    }
  }
  const Eigen::ArrayXd mag = (gx.array().square() + gy.array().square()).sqrt().reshaped();

  const double n = static_cast<double>(mag.size());
  const double mean = mag.mean();
  const Eigen::ArrayXd c = mag - mean;
  const double m2 = c.square().sum() / n;
  const double m3 = c.cube().sum() / n;
  const double m4 = c.square().square().sum() / n;
  Eigen::Vector4d f(mean, std::sqrt(m2), 0.0, 0.0);
  // relative guard: spread below rounding level of the magnitudes is no spread
  if (m2 > 1e-20 * (1.0 + mean * mean)) {
    f(2) = m3 / std::pow(m2, 1.5);
    f(3) = m4 / (m2 * m2);
  }
  return f;
}

FeatureMatrix image_features(const GrayImage& img, Index size, Index stride) {
  const PatchSet set = extract_patches(img, size, stride);
  FeatureMatrix f;
  f.patch_size = size;
  f.origins = set.origins;
  f.features.resize(static_cast<Index>(set.patches.size()), 4);
  parallel_for(set.patches.size(), [&](std::size_t i) {
    f.features.row(static_cast<Index>(i)) = patch_features(set.patches[i]).transpose();
  });
  return f;
}

Whitener::Whitener(Vector mean, Matrix transform) : mean_(std::move(mean)), transform_(std::move(transform)) {
  if (transform_.rows() != mean_.size() || transform_.cols() != mean_.size()) {
    throw Error(ErrorCode::InvalidConfig, "whitener shape mismatch");
  }
}

Points Whitener::apply(const Points& x) const {
  if (x.cols() != mean_.size()) throw Error(ErrorCode::InvalidConfig, "feature dimension mismatch");
  return (x.rowwise() - mean_.transpose()) * transform_.transpose();
}

FeatureMatrix Whitener::apply(const FeatureMatrix& f) const {
  FeatureMatrix out = f;
  out.features = apply(f.features);
  return out;
}

Whitener fit_whitener(std::span<const FeatureMatrix> corpus) {
  Index n = 0;
  Index d = -1;
  for (const auto& f : corpus) {
    if (d >= 0 && f.features.cols() != d) throw Error(ErrorCode::InvalidConfig, "feature dimension mismatch");
    d = f.features.cols();
    n += f.size();
  }
  if (n < 5) throw Error(ErrorCode::InsufficientData, "whitening needs at least 5 feature rows");
  Points all(n, d);
  Index at = 0;
  for (const auto& f : corpus) {
    all.middleRows(at, f.size()) = f.features;
    at += f.size();
  }
  if (!all.allFinite()) throw Error(ErrorCode::InvalidData, "features are not finite");
  const Vector mean = all.colwise().mean().transpose();
  const Points centered = all.rowwise() - mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector ev = eig.eigenvalues();
  if (!(ev.minCoeff() > 1e-12 * std::max(ev.maxCoeff(), 0.0)) || !(ev.maxCoeff() > 0.0)) {
    throw Error(ErrorCode::DegenerateFeatures, "feature covariance is rank deficient (eigenvalues " +
                                                   std::to_string(ev.minCoeff()) + " .. " +
                                                   std::to_string(ev.maxCoeff()) + ")");
  }
  const Matrix w = eig.eigenvectors() * ev.cwiseInverse().cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
  return Whitener(mean, w);
}

DetectionResult detect_defect(const FeatureMatrix& query, std::span<const FeatureMatrix> normals,
                              const DetectOptions& options) {
  if (normals.empty()) throw Error(ErrorCode::InvalidConfig, "no normal images to compare against");
  if (options.k < 1 || options.k > static_cast<Index>(normals.size())) {
    throw Error(ErrorCode::InvalidConfig, "k must lie in [1, number of normals]");
  }
  DetectionResult res;
  const Dataset q = query.dataset();
  if (options.h) {
    res.h = KernelSpec(*options.h).bandwidth();
  } else {
    res.h = select_bandwidth(q, default_bandwidth_grid(q), options.heuristic_fraction, options.seed);
  }
  const std::size_t m = normals.size();
  res.first_pass.assign(m, kNaN);
  std::vector<std::string> diag(m);
  const ConstantAlpha unit;
  parallel_for(m, [&](std::size_t i) {
    try {
      res.first_pass[i] = kl_estimate(q, normals[i].dataset(), unit, res.h).value;
    } catch (const Error& e) {
      diag[i] = "normal " + std::to_string(i) + " skipped in first pass: " + e.what();
    }
  });

  std::vector<Index> order;
  for (std::size_t i = 0; i < m; ++i)
    if (std::isfinite(res.first_pass[i])) order.push_back(static_cast<Index>(i));
  if (order.empty()) throw Error(ErrorCode::NumericFailure, "no normal image could be scored");
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return res.first_pass[static_cast<std::size_t>(a)] < res.first_pass[static_cast<std::size_t>(b)];
  });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(options.k)));
  res.candidates = order;

  const std::size_t kk = order.size();
  res.second_pass.assign(kk, kNaN);
  std::vector<std::shared_ptr<const AlphaFunction>> alphas(kk);
  std::vector<std::string> diag2(kk);
  parallel_for(kk, [&](std::size_t c) {
    const auto idx = static_cast<std::size_t>(order[c]);
    try {
      const Dataset n = normals[idx].dataset();
      RkhsFitOptions fit = options.fit;
      fit.seed = options.seed.derive(idx + 1);
      auto alpha = std::make_shared<RkhsLogAlpha>(fit_model_based_alpha(q, n, fit).alpha);
      res.second_pass[c] = kl_estimate(q, n, *alpha, res.h).value;
      alphas[c] = std::move(alpha);
    } catch (const Error& e) {
      diag2[c] = "normal " + std::to_string(idx) + " skipped in second pass: " + e.what();
    }
  });

  for (auto& d : diag)
    if (!d.empty()) res.diagnostics.push_back(std::move(d));
  for (auto& d : diag2)
    if (!d.empty()) res.diagnostics.push_back(std::move(d));
  res.score = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < kk; ++c) {
    if (std::isfinite(res.second_pass[c]) && res.second_pass[c] < res.score) {
      res.score = res.second_pass[c];
      res.best_match = order[c];
      res.best_alpha = alphas[c];
    }
  }
  if (res.best_match < 0) throw Error(ErrorCode::NumericFailure, "every second-pass estimate failed");
  return res;
}

double intersection_over_union(const Box& a, const Box& b) {
  const Index r0 = std::max(a.row, b.row);
  const Index c0 = std::max(a.col, b.col);
  const Index r1 = std::min(a.row + a.height, b.row + b.height);
  const Index c1 = std::min(a.col + a.width, b.col + b.width);
  const Index inter = std::max<Index>(0, r1 - r0) * std::max<Index>(0, c1 - c0);
  const Index uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

Localization localize_defect(const FeatureMatrix& query, const FeatureMatrix& match,
                             std::shared_ptr<const AlphaFunction> alpha, double h, double factor) {
  if (query.origins.size() != static_cast<std::size_t>(query.size())) {
    throw Error(ErrorCode::InvalidConfig, "query features lack patch origins");
  }
  if (!alpha) alpha = std::make_shared<ConstantAlpha>();
  const RatioEstimator est(query.dataset(), match.dataset(), std::move(alpha), h, 1.0);
  Localization loc;
  const auto n = static_cast<std::size_t>(query.size());
  loc.lpdr.resize(n);
  parallel_for(n, [&](std::size_t i) { loc.lpdr[i] = est.lpdr_at(query.features.row(static_cast<Index>(i)).transpose()); });

  double mx = -std::numeric_limits<double>::infinity();
  double mn = std::numeric_limits<double>::infinity();
  for (double v : loc.lpdr) {
    if (std::isnan(v)) continue;
    mx = std::max(mx, v);
    mn = std::min(mn, v);
  }
  loc.mask.assign(n, false);
  loc.confidence = mx;
  if (!(mx > mn) || (std::isfinite(mx) && std::isfinite(mn) && mx - mn <= 1e-12 * (1.0 + std::abs(mx)))) {
    return loc;
  }
  const double threshold = std::isfinite(mx) ? mx - (1.0 - factor) * std::abs(mx) : mx;
  Index r0 = std::numeric_limits<Index>::max(), c0 = r0, r1 = -1, c1 = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(loc.lpdr[i] >= threshold)) continue;
    loc.mask[i] = true;
    const auto& o = query.origins[i];
    r0 = std::min(r0, o.row);
    c0 = std::min(c0, o.col);
    r1 = std::max(r1, o.row + query.patch_size);
    c1 = std::max(c1, o.col + query.patch_size);
  }
  loc.box = {r0, c0, r1 - r0, c1 - c0};
  loc.localized = true;
  return loc;
}

GrayImage make_noise_texture(Index width, Index height, SeedSpec seed, double contrast) {
  auto rng = seed.engine();
  std::normal_distribution<double> normal;
  Matrix noise(height + 4, width + 4);
  for (Index i = 0; i < noise.rows(); ++i)
    for (Index j = 0; j < noise.cols(); ++j) noise(i, j) = normal(rng);
  // 5x5 binomial smoothing keeps the texture fine-grained but correlated
  const double w[5] = {1, 4, 6, 4, 1};
  GrayImage img(width, height, 255);
  for (Index i = 0; i < height; ++i) {
    for (Index j = 0; j < width; ++j) {
      double s = 0.0;
      for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b) s += w[a] * w[b] * noise(i + a, j + b);
      s /= 70.0;  // sqrt of the sum of squared weights restores unit variance
      img.at(i, j) = static_cast<std::uint16_t>(std::clamp(std::lround(128.0 + contrast * s), 0L, 255L));
    }
  }
  return img;
}

Box inject_square(GrayImage& img, Index row, Index col, Index size, std::uint16_t value) {
  if (row < 0 || col < 0 || row + size > img.height || col + size > img.width || size < 1) {
    throw Error(ErrorCode::InvalidConfig, "square does not fit inside the image");
  }
  if (value > img.max_value) throw Error(ErrorCode::InvalidConfig, "intensity exceeds the image max value");
  for (Index i = 0; i < size; ++i)
    for (Index j = 0; j < size; ++j) img.at(row + i, col + j) = value;
  return {row, col, size, size};
}

double roc_auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw Error(ErrorCode::InsufficientData, "AUC needs both classes");
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

InspectionModel build_inspection_model(std::span<const GrayImage> normals, std::vector<std::string> names,
                                       Index patch_size, Index stride) {
  if (normals.empty()) throw Error(ErrorCode::InvalidConfig, "no normal images");
  if (!names.empty() && names.size() != normals.size()) {
    throw Error(ErrorCode::InvalidConfig, "one name per normal image expected");
  }
  std::vector<FeatureMatrix> raw;
  raw.reserve(normals.size());
  for (const auto& img : normals) raw.push_back(image_features(img, patch_size, stride));
  Whitener w = fit_whitener(raw);
  InspectionModel model{std::move(w), {}, std::move(names), patch_size, stride};
  for (const auto& f : raw) model.normals.push_back(model.whitener.apply(f));
  if (model.names.empty()) {
    for (std::size_t i = 0; i < normals.size(); ++i) model.names.push_back(std::to_string(i));
  }
  return model;
}

InspectionResult inspect_image(const InspectionModel& model, const GrayImage& query, const DetectOptions& options,
                               double factor) {
  const FeatureMatrix q = model.whitener.apply(image_features(query, model.patch_size, model.stride));
  InspectionResult r;
  r.detection = detect_defect(q, model.normals, options);
  r.localization = localize_defect(q, model.normals[static_cast<std::size_t>(r.detection.best_match)],
                                   r.detection.best_alpha, r.detection.h, factor);
  return r;
}

std::vector<std::filesystem::path> list_pgm_files(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error(ErrorCode::Io, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace vwkde
