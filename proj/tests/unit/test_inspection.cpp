#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "vwkde/inspection.hpp"

using namespace vwkde;
using vwkde::test::error_of;

namespace {

std::vector<unsigned char> bytes(const std::string& header, std::vector<unsigned char> payload) {
  std::vector<unsigned char> b(header.begin(), header.end());
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

Matrix random_patch(std::mt19937_64& rng, Index n = 32) {
  std::uniform_real_distribution<double> u(0.0, 255.0);
  Matrix m(n, n);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < n; ++c) m(r, c) = u(rng);
  return m;
}

std::vector<FeatureMatrix> noise_corpus(int count, Index size, std::uint64_t seed) {
  std::vector<FeatureMatrix> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(image_features(make_noise_texture(size, size, SeedSpec{seed}.derive(static_cast<std::uint64_t>(i)))));
  }
  return out;
}

}  // namespace

TEST_SUITE("inspection") {

TEST_CASE("pgm parsing") {
  const auto img = parse_pgm(bytes("P5\n2 2\n255\n", {0, 255, 128, 64}));
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.at(0, 1) == 255);
  CHECK(img.at(1, 0) == 128);
  CHECK(img.at(1, 1) == 64);

  const auto comment = parse_pgm(bytes("P5 # a comment\n2 1 255\n", {7, 9}));
  CHECK(comment.at(0, 1) == 9);

  const auto wide = parse_pgm(bytes("P5\n2 1\n65535\n", {0x01, 0x02, 0xff, 0xfe}));
  CHECK(wide.max_value == 65535);
  CHECK(wide.at(0, 0) == 0x0102);
  CHECK(wide.at(0, 1) == 0xfffe);

  CHECK(error_of([] { parse_pgm(bytes("P2\n2 2\n255\n", {0, 1, 2, 3})); }) == ErrorCode::Parse);
  CHECK(error_of([] { parse_pgm(bytes("P5\n2 2\n255\n", {0, 1, 2})); }) == ErrorCode::Parse);
  CHECK(error_of([] { parse_pgm(bytes("P5\n0 2\n255\n", {})); }) == ErrorCode::Parse);
  CHECK(error_of([] { parse_pgm(bytes("P5\n1 1\n70000\n", {0, 0, 0})); }) == ErrorCode::Parse);
  CHECK(error_of([] { parse_pgm(bytes("P5\n1 1\n100\n", {200})); }) == ErrorCode::Parse);
  try {
    parse_pgm(bytes("P5\n2 2\n255\n", {0, 1, 2}));
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
}

TEST_CASE("pgm file round trip") {
  const auto dir = test::scratch_dir("pgm");
  GrayImage img(5, 3);
  for (Index i = 0; i < 15; ++i) img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(i * 17);
  save_pgm(img, dir / "a.pgm");
  const auto back = load_pgm(dir / "a.pgm");
  CHECK(back.pixels == img.pixels);
  CHECK(back.width == 5);

  GrayImage deep(3, 2, 4095);
  deep.pixels = {0, 4095, 1000, 2000, 3000, 1};
  save_pgm(deep, dir / "b.pgm");
  CHECK(load_pgm(dir / "b.pgm").pixels == deep.pixels);

  try {
    load_pgm(dir / "missing.pgm");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Io);
    CHECK(std::string(e.what()).find("missing.pgm") != std::string::npos);
  }
  std::ofstream(dir / "z.pgm") << "x";
  std::ofstream(dir / "note.txt") << "x";
  const auto files = list_pgm_files(dir);
  REQUIRE(files.size() == 3);
  CHECK(files[0].filename() == "a.pgm");
  CHECK(files[2].filename() == "z.pgm");
}

TEST_CASE("patch grid") {
  CHECK(extract_patches(GrayImage(32, 32)).origins.size() == 1);
  CHECK(extract_patches(GrayImage(48, 48)).origins.size() == 4);
  CHECK(extract_patches(GrayImage(496, 496)).origins.size() == 900);
  const auto p = extract_patches(GrayImage(64, 40));
  CHECK(p.origins.size() == 3);
  CHECK(p.origins.back().col == 32);
  CHECK(p.origins.back().row == 0);
  CHECK(error_of([] { extract_patches(GrayImage(31, 64)); }) == ErrorCode::InvalidData);

  GrayImage g(40, 40);
  for (Index r = 0; r < 40; ++r)
    for (Index c = 0; c < 40; ++c) g.at(r, c) = static_cast<std::uint16_t>(r * 40 + c);
  const auto q = extract_patches(g, 32, 8);
  REQUIRE(q.patches.size() == 4);
  CHECK(q.patches[3](0, 0) == 8 * 40 + 8);
}

TEST_CASE("patch features") {
  const Matrix flat = Matrix::Constant(32, 32, 91.0);
  CHECK(patch_features(flat).norm() == 0.0);

  std::mt19937_64 rng(3);
  const Matrix p = random_patch(rng);
  const Eigen::Vector4d f = patch_features(p);
  CHECK(f(0) > 0.0);
  CHECK(f(1) > 0.0);
  CHECK(f(3) >= 1.0 + f(2) * f(2) - 1e-9);
  CHECK((patch_features((p.array() + 40.0).matrix()) - f).norm() < 1e-9 * f.norm());
  CHECK((patch_features(p.transpose()) - f).norm() < 1e-9 * f.norm());
  CHECK((patch_features(p.colwise().reverse()) - f).norm() < 1e-9 * f.norm());
  // gradient moments scale with contrast, shape moments do not
  const Eigen::Vector4d s = patch_features(2.0 * p);
  CHECK(s(0) == doctest::Approx(2.0 * f(0)));
  CHECK(s(2) == doctest::Approx(f(2)));
  CHECK(s(3) == doctest::Approx(f(3)));

  // a linear ramp has a constant gradient magnitude everywhere
  Matrix ramp(32, 32);
  for (Index r = 0; r < 32; ++r)
    for (Index c = 0; c < 32; ++c) ramp(r, c) = 3.0 * static_cast<double>(c);
  const Eigen::Vector4d rf = patch_features(ramp);
  CHECK(rf(0) == doctest::Approx(3.0 * 32.0));
  CHECK(rf(1) < 1e-9);
  CHECK(rf(2) == 0.0);
  CHECK(rf(3) == 0.0);
}

TEST_CASE("whitening") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n01;
  const Matrix mix = test::random_spd(rng, 4);
  std::vector<FeatureMatrix> corpus(3);
  for (auto& f : corpus) {
    f.features.resize(200, 4);
    for (Index i = 0; i < 200; ++i) {
      Vector z(4);
      for (auto& v : z) v = n01(rng);
      f.features.row(i) = (mix * z + test::vec({5, -1, 2, 10})).transpose();
    }
    f.origins.resize(200);
  }
  const Whitener w = fit_whitener(corpus);
  Points all(600, 4);
  for (int k = 0; k < 3; ++k) all.middleRows(200 * k, 200) = w.apply(corpus[static_cast<std::size_t>(k)]).features;
  const Vector mean = all.colwise().mean().transpose();
  const Matrix centered = all.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / 599.0;
  CHECK(mean.norm() < 1e-10);
  CHECK((cov - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((w.transform() - w.transform().transpose()).norm() < 1e-12);

  // whitening an already white corpus changes nothing
  std::vector<FeatureMatrix> white{FeatureMatrix{all, std::vector<PatchOrigin>(600), 32}};
  const Whitener again = fit_whitener(white);
  CHECK((again.apply(all) - all).cwiseAbs().maxCoeff() < 1e-6);

  // affine images of the corpus whiten to the same points up to rotation: distances agree
  const Matrix a = test::random_spd(rng, 4);
  std::vector<FeatureMatrix> moved{FeatureMatrix{(all * a).rowwise() + test::vec({1, 2, 3, 4}).transpose(),
                                                 std::vector<PatchOrigin>(600), 32}};
  const Points wm = fit_whitener(moved).apply(moved[0].features);
  for (Index i = 1; i < 10; ++i) {
    CHECK((wm.row(i) - wm.row(0)).norm() == doctest::Approx((all.row(i) - all.row(0)).norm()).epsilon(1e-6));
  }

  Points rank(50, 4);
  for (Index i = 0; i < 50; ++i) {
    const double t = n01(rng), u = n01(rng);
    rank.row(i) << t, u, t + u, 1.0;
  }
  std::vector<FeatureMatrix> degenerate{FeatureMatrix{rank, std::vector<PatchOrigin>(50), 32}};
  CHECK(error_of([&] { fit_whitener(degenerate); }) == ErrorCode::DegenerateFeatures);
  std::vector<FeatureMatrix> tiny{FeatureMatrix{rank.topRows(4), std::vector<PatchOrigin>(4), 32}};
  CHECK(error_of([&] { fit_whitener(tiny); }) == ErrorCode::InsufficientData);
}

TEST_CASE("noise texture and squares") {
  const auto a = make_noise_texture(96, 64, SeedSpec{1});
  const auto b = make_noise_texture(96, 64, SeedSpec{1});
  const auto c = make_noise_texture(96, 64, SeedSpec{2});
  CHECK(a.pixels == b.pixels);
  CHECK(a.pixels != c.pixels);
  double mean = 0.0;
  for (auto v : a.pixels) mean += v;
  mean /= static_cast<double>(a.pixels.size());
  CHECK(std::abs(mean - 128.0) < 8.0);

  GrayImage d = a;
  const Box box = inject_square(d, 10, 20, 16, 250);
  CHECK(box.row == 10);
  CHECK(box.area() == 256);
  CHECK(d.at(25, 35) == 250);
  CHECK(d.at(26, 35) == a.at(26, 35));
  CHECK(error_of([&] { inject_square(d, 60, 0, 16, 0); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("iou and auc") {
  const Box a{0, 0, 10, 10};
  CHECK(intersection_over_union(a, a) == 1.0);
  CHECK(intersection_over_union(a, Box{0, 5, 10, 10}) == doctest::Approx(50.0 / 150.0));
  CHECK(intersection_over_union(a, Box{20, 20, 5, 5}) == 0.0);
  CHECK(intersection_over_union(Box{}, Box{}) == 0.0);

  const std::vector<double> pos{3, 4, 5}, neg{1, 2}, mixed{2, 4.5};
  CHECK(roc_auc(pos, neg) == 1.0);
  CHECK(roc_auc(neg, pos) == 0.0);
  CHECK(roc_auc(pos, mixed) == doctest::Approx(4.0 / 6.0));
  const std::vector<double> same{1, 1};
  CHECK(roc_auc(same, same) == 0.5);
}

TEST_CASE("detection") {
  auto corpus = noise_corpus(6, 128, 40);
  const Whitener w = fit_whitener(corpus);
  for (auto& f : corpus) f = w.apply(f);
  DetectOptions opt;
  opt.h = 0.6;
  opt.k = 6;

  // a query identical to a normal matches it
  const DetectionResult self = detect_defect(corpus[2], corpus, opt);
  CHECK(self.best_match == 2);
  CHECK(self.candidates.size() == 6);
  CHECK(self.diagnostics.empty());
  REQUIRE(self.best_alpha);

  const auto query = w.apply(image_features(make_noise_texture(128, 128, SeedSpec{999})));
  opt.k = 2;
  const DetectionResult two = detect_defect(query, corpus, opt);
  CHECK(two.candidates.size() == 2);
  for (std::size_t c = 0; c < two.candidates.size(); ++c) {
    for (std::size_t i = 0; i < two.first_pass.size(); ++i) {
      const bool chosen = std::find(two.candidates.begin(), two.candidates.end(), static_cast<Index>(i)) !=
                          two.candidates.end();
      if (!chosen) CHECK(two.first_pass[static_cast<std::size_t>(two.candidates[c])] <= two.first_pass[i]);
    }
  }
  CHECK(std::find(two.candidates.begin(), two.candidates.end(), two.best_match) != two.candidates.end());
  CHECK(two.score == *std::min_element(two.second_pass.begin(), two.second_pass.end()));

  opt.seed = SeedSpec{8};
  const DetectionResult again = detect_defect(query, corpus, opt);
  const DetectionResult again2 = detect_defect(query, corpus, opt);
  CHECK(again.score == again2.score);

  opt.k = 7;
  CHECK(error_of([&] { detect_defect(query, corpus, opt); }) == ErrorCode::InvalidConfig);
  opt.k = 1;
  CHECK(error_of([&] { detect_defect(query, std::span<const FeatureMatrix>{}, opt); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("localization") {
  auto corpus = noise_corpus(4, 160, 70);
  const Whitener w = fit_whitener(corpus);
  const auto normal = w.apply(corpus[0]);

  const Localization flat = localize_defect(normal, normal, nullptr, 0.5);
  CHECK(flat.lpdr.size() == static_cast<std::size_t>(normal.size()));

  GrayImage img = make_noise_texture(160, 160, SeedSpec{71});
  const Box truth = inject_square(img, 64, 64, 32, 255);
  const auto q = w.apply(image_features(img));
  const Localization loc = localize_defect(q, normal, nullptr, 0.5, 0.9);
  REQUIRE(loc.localized);
  CHECK(intersection_over_union(loc.box, truth) > 0.1);
  const Localization loose = localize_defect(q, normal, nullptr, 0.5, 0.5);
  Index tight_count = 0, loose_count = 0;
  for (std::size_t i = 0; i < loc.mask.size(); ++i) {
    tight_count += loc.mask[i];
    loose_count += loose.mask[i];
    if (loc.mask[i]) CHECK(loose.mask[i]);
  }
  CHECK(loose_count >= tight_count);
  CHECK(tight_count >= 1);

  // all patches identical gives a flat map
  GrayImage blank(64, 64);
  std::fill(blank.pixels.begin(), blank.pixels.end(), std::uint16_t{100});
  const FeatureMatrix bf = image_features(blank);
  const Localization none = localize_defect(bf, normal, nullptr, 0.5);
  CHECK(!none.localized);
}

TEST_CASE("inspection model") {
  std::vector<GrayImage> normals;
  for (int i = 0; i < 5; ++i) normals.push_back(make_noise_texture(128, 128, SeedSpec{300}.derive(i)));
  const auto model = build_inspection_model(normals, {"a", "b", "c", "d", "e"});
  CHECK(model.normals.size() == 5);
  GrayImage q = make_noise_texture(128, 128, SeedSpec{555});
  inject_square(q, 32, 48, 32, 255);
  DetectOptions opt;
  opt.k = 2;
  const auto r = inspect_image(model, q, opt);
  CHECK(r.detection.best_match >= 0);
  CHECK(std::isfinite(r.detection.score));
  CHECK(error_of([&] { build_inspection_model(normals, {"a"}); }) == ErrorCode::InvalidConfig);
}

}  // TEST_SUITE
