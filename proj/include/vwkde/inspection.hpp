#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vwkde/core.hpp"
#include "vwkde/weight.hpp"

namespace vwkde {

/// Row-major grayscale image with 8- or 16-bit intensities.
struct GrayImage {
  Index width = 0;
  Index height = 0;
  int max_value = 255;
  std::vector<std::uint16_t> pixels;

  GrayImage() = default;
  GrayImage(Index width, Index height, int max_value = 255);

  std::uint16_t& at(Index row, Index col) { return pixels[static_cast<std::size_t>(row * width + col)]; }
  std::uint16_t at(Index row, Index col) const { return pixels[static_cast<std::size_t>(row * width + col)]; }
};

/// Binary PGM (P5) only. Errors carry the byte offset of the problem.
GrayImage load_pgm(const std::filesystem::path& path);
GrayImage parse_pgm(std::span<const unsigned char> bytes);
void save_pgm(const GrayImage& image, const std::filesystem::path& path);

struct PatchOrigin {
  Index row = 0;
  Index col = 0;
};

struct PatchSet {
  Index size = 32;
  std::vector<PatchOrigin> origins;
  /// size x size intensity blocks, aligned with origins.
  std::vector<Matrix> patches;
};

/// Every fully contained size x size window on the stride grid.
PatchSet extract_patches(const GrayImage& image, Index size = 32, Index stride = 16);

/// 3x3 Gaussian blur (sigma 1), Scharr gradients, then mean, standard
/// deviation, skewness and (non-excess) kurtosis of the gradient magnitude
/// over pixels where both filters are fully supported. Skewness and kurtosis
/// are 0 when the magnitudes have no spread.
Eigen::Vector4d patch_features(const Matrix& patch);

struct FeatureMatrix {
  /// One row of four moments per patch.
  Points features;
  std::vector<PatchOrigin> origins;
  Index patch_size = 32;

  Index size() const { return features.rows(); }
  Dataset dataset() const { return Dataset(features); }
};

FeatureMatrix image_features(const GrayImage& image, Index size = 32, Index stride = 16);

/// Affine map x -> W (x - mean) with W the symmetric inverse square root of
/// the corpus covariance.
class Whitener {
 public:
  Whitener(Vector mean, Matrix transform);

  const Vector& mean() const { return mean_; }
  const Matrix& transform() const { return transform_; }

  Points apply(const Points& x) const;
  FeatureMatrix apply(const FeatureMatrix& f) const;

 private:
  Vector mean_;
  Matrix transform_;
};

Whitener fit_whitener(std::span<const FeatureMatrix> corpus);

struct DetectOptions {
  Index k = 5;
  /// Fixed bandwidth; when unset it is picked per query by the LOO heuristic
  /// on a subsample of the query features.
  std::optional<double> h;
  double heuristic_fraction = 0.25;
  RkhsFitOptions fit{};
  SeedSpec seed{};
};

struct DetectionResult {
  double score = 0.0;
  Index best_match = -1;
  double h = 0.0;
  /// Plain KDE KL against every normal (NaN where estimation failed).
  std::vector<double> first_pass;
  /// Normals re-scored in the second pass, lowest first-pass score first.
  std::vector<Index> candidates;
  std::vector<double> second_pass;
  std::shared_ptr<const AlphaFunction> best_alpha;
  std::vector<std::string> diagnostics;
};

/// min over normals of KL(query || normal): a plain KDE pass ranks every
/// normal, then the k best are re-estimated with the model-based VWKDE.
DetectionResult detect_defect(const FeatureMatrix& query, std::span<const FeatureMatrix> normals,
                              const DetectOptions& options = {});

struct Box {
  Index row = 0;
  Index col = 0;
  Index height = 0;
  Index width = 0;

  Index area() const { return height * width; }
};

double intersection_over_union(const Box& a, const Box& b);

struct Localization {
  std::vector<double> lpdr;
  std::vector<bool> mask;
  Box box{};
  double confidence = 0.0;
  /// False when the LPDR map is flat and no patch stands out.
  bool localized = false;
};

/// LPDR log p_query - log p_match at every query patch. Patches scoring at
/// least max - (1 - factor) |max| form the mask; the box bounds their
/// footprints.
Localization localize_defect(const FeatureMatrix& query, const FeatureMatrix& match,
                             std::shared_ptr<const AlphaFunction> alpha, double h, double factor = 0.9);

/// Smoothed Gaussian noise around mid-gray, clamped to 8 bits.
GrayImage make_noise_texture(Index width, Index height, SeedSpec seed, double contrast = 24.0);

/// Overwrites a square with a constant intensity and returns its box.
Box inject_square(GrayImage& image, Index row, Index col, Index size, std::uint16_t value);

/// Probability that a random positive outranks a random negative; ties count half.
double roc_auc(std::span<const double> positive_scores, std::span<const double> negative_scores);

/// Whitening fitted on a normal corpus plus the whitened normal features.
struct InspectionModel {
  Whitener whitener;
  std::vector<FeatureMatrix> normals;
  std::vector<std::string> names;
  Index patch_size = 32;
  Index stride = 16;
};

InspectionModel build_inspection_model(std::span<const GrayImage> normals, std::vector<std::string> names = {},
                                       Index patch_size = 32, Index stride = 16);

struct InspectionResult {
  DetectionResult detection;
  Localization localization;
};

InspectionResult inspect_image(const InspectionModel& model, const GrayImage& query,
                               const DetectOptions& options = {}, double factor = 0.9);

/// Sorted *.pgm paths of a directory.
std::vector<std::filesystem::path> list_pgm_files(const std::filesystem::path& dir);

}  // namespace vwkde
