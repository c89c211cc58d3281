#include <doctest.h>

#include "smarc/data.hpp"
#include "smarc/image_io.hpp"
#include "test_util.hpp"

#include <jpeglib.h>

#include <cstdio>
#include <filesystem>
#include <set>

using namespace smarc;
namespace fs = std::filesystem;

namespace {

Index count_ones(const Tensor<float>& m) {
  Index n = 0;
  for (Index i = 0; i < m.size(); ++i) n += m[i] == 1.f;
  return n;
}

// Minimal dataset with given per-class counts; images are tiny placeholders.
Dataset label_only_dataset(const std::vector<int>& counts) {
  Dataset ds;
  for (std::size_t c = 0; c < counts.size(); ++c)
    ds.class_names.push_back("class" + std::to_string(c));
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (int i = 0; i < counts[c]; ++i) {
      Sample s;
      s.image = Tensor<float>::zeros({4, 4, 3});
      s.mask = Tensor<float>::ones({4, 4, 1});
      s.label = static_cast<int>(c);
      s.source_path = "c" + std::to_string(c) + "/" + std::to_string(i);
      ds.samples.push_back(std::move(s));
    }
  return ds;
}

void write_test_jpeg(const std::string& path, const Tensor<float>& img) {
  const Index h = img.dim(0), w = img.dim(1);
  std::vector<unsigned char> buf(static_cast<std::size_t>(h * w * 3));
  for (Index i = 0; i < h * w * 3; ++i)
    buf[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(img[i] * 255.f));

  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  REQUIRE(f != nullptr);
  jpeg_stdio_dest(&cinfo, f);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, 95, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.next_scanline) * static_cast<std::size_t>(w * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(f);
}

}  // namespace

TEST_CASE("central_mask reproduces the 224/10% protocol numbers") {
  auto m = central_mask(224, 0.10);
  CHECK(count_ones(m) == 5041);  // 71 * 71
  // offsets 76..146 inclusive
  CHECK(m[(76 * 224 + 76)] == 1.f);
  CHECK(m[(146 * 224 + 146)] == 1.f);
  CHECK(m[(75 * 224 + 76)] == 0.f);
  CHECK(m[(147 * 224 + 146)] == 0.f);
  CHECK(m[(76 * 224 + 75)] == 0.f);
  CHECK(m[(146 * 224 + 147)] == 0.f);
  const double frac = static_cast<double>(count_ones(m)) / (224.0 * 224.0);
  CHECK(frac == doctest::Approx(0.1005).epsilon(1e-3));
}

TEST_CASE("central_mask exact square and full-visibility cases") {
  auto m = central_mask(10, 0.25);
  CHECK(count_ones(m) == 25);
  for (Index y = 2; y < 7; ++y)
    for (Index x = 2; x < 7; ++x) CHECK(m[y * 10 + x] == 1.f);

  auto full = central_mask(16, 1.0);
  CHECK(count_ones(full) == 16 * 16);

  CHECK_THROWS_AS(central_mask(16, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(central_mask(16, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(central_mask(2, 0.5), std::invalid_argument);
}

TEST_CASE("central_mask stays within 1% of the requested fraction for size >= 64") {
  Rng rng(401);
  for (int t = 0; t < 20; ++t) {
    const Index size = 64 + 8 * rng.uniform_int(0, 40);
    const double frac = rng.uniform(0.05, 0.9);
    auto m = central_mask(size, frac);
    const double got = static_cast<double>(count_ones(m)) / static_cast<double>(size * size);
    CHECK(std::abs(got - frac) < 0.01);
  }
}

TEST_CASE("apply_mask zeroes exactly the invisible pixels") {
  Rng rng(402);
  auto img = test_util::random_tensor<float>({8, 8, 3}, rng, 0.f, 1.f);
  auto ones = Tensor<float>::ones({8, 8, 1});
  CHECK(test_util::bitwise_equal(apply_mask(img, ones), img));

  auto zeros = Tensor<float>::zeros({8, 8, 1});
  auto black = apply_mask(img, zeros);
  for (Index i = 0; i < black.size(); ++i) CHECK(black[i] == 0.f);

  auto checker = Tensor<float>::uninitialized({8, 8, 1});
  for (Index y = 0; y < 8; ++y)
    for (Index x = 0; x < 8; ++x) checker.data()[y * 8 + x] = static_cast<float>((y + x) % 2);
  auto masked = apply_mask(img, checker);
  for (Index p = 0; p < 64; ++p)
    for (Index c = 0; c < 3; ++c)
      CHECK(masked[p * 3 + c] == (checker[p] == 1.f ? img[p * 3 + c] : 0.f));
}

TEST_CASE("split reproduces the published 1753/584/584 partition") {
  for (auto counts : {std::vector<int>{731, 730, 730, 730}, std::vector<int>{733, 730, 730, 728},
                      std::vector<int>{800, 700, 721, 700}}) {
    auto ds = label_only_dataset(counts);
    REQUIRE(ds.samples.size() == 2921);
    auto r = split(ds, SplitSpec{});
    CHECK(r.train.size() == 1753);
    CHECK(r.val.size() == 584);
    CHECK(r.test.size() == 584);
  }
}

TEST_CASE("split of 10 single-class items is 6/2/2") {
  auto ds = label_only_dataset({10});
  auto r = split(ds, SplitSpec{});
  CHECK(r.train.size() == 6);
  CHECK(r.val.size() == 2);
  CHECK(r.test.size() == 2);
}

TEST_CASE("split is deterministic, disjoint and exhaustive") {
  auto ds = label_only_dataset({13, 29, 8, 17});
  auto a = split(ds, SplitSpec{});
  auto b = split(ds, SplitSpec{});
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);

  std::set<int> seen;
  for (const auto* part : {&a.train, &a.val, &a.test})
    for (int i : *part) CHECK(seen.insert(i).second);
  CHECK(seen.size() == ds.samples.size());

  SplitSpec other;
  other.seed = 43;
  auto c = split(ds, other);
  CHECK(a.train != c.train);
}

TEST_CASE("stratified split keeps per-class proportions") {
  auto ds = label_only_dataset({40, 20, 10, 30});
  auto r = split(ds, SplitSpec{});
  std::vector<int> val_counts(4, 0);
  for (int i : r.val) val_counts[static_cast<std::size_t>(ds.samples[static_cast<std::size_t>(i)].label)]++;
  CHECK(val_counts[0] == 8);
  CHECK(val_counts[1] == 4);
  CHECK(val_counts[2] == 2);
  CHECK(val_counts[3] == 6);
}

TEST_CASE("stratified split rejects an empty class") {
  auto ds = label_only_dataset({5, 5});
  ds.class_names.push_back("ghost");
  CHECK_THROWS_AS(split(ds, SplitSpec{}), std::invalid_argument);
}

TEST_CASE("identity augment draw leaves the sample byte-identical") {
  Rng rng(403);
  Sample s;
  s.image = test_util::random_tensor<float>({16, 16, 3}, rng, 0.f, 1.f);
  s.mask = central_mask(16, 0.25);
  s.label = 2;
  auto out = augment(s, AugmentDraw{});
  CHECK(test_util::bitwise_equal(out.image, s.image));
  CHECK(test_util::bitwise_equal(out.mask, s.mask));
  CHECK(out.label == 2);
}

TEST_CASE("two 180-degree rotations restore the original") {
  Rng rng(404);
  Sample s;
  s.image = test_util::random_tensor<float>({12, 12, 3}, rng, 0.f, 1.f);
  s.mask = central_mask(12, 0.3);
  AugmentDraw d;
  d.rot_k = 2;
  auto once = augment(s, d);
  auto twice = augment(once, d);
  CHECK(test_util::bitwise_equal(twice.image, s.image));
  CHECK(test_util::bitwise_equal(twice.mask, s.mask));
}

TEST_CASE("brightness shifts a constant image exactly") {
  Sample s;
  s.image = Tensor<float>::full({8, 8, 3}, 0.5f);
  s.mask = Tensor<float>::ones({8, 8, 1});
  AugmentDraw d;
  d.brightness = 0.06;
  auto out = augment(s, d);
  for (Index i = 0; i < out.image.size(); ++i)
    CHECK(out.image[i] == doctest::Approx(0.56f).epsilon(1e-6));
}

TEST_CASE("geometric augmentation commutes with masking") {
  Rng rng(405);
  for (int t = 0; t < 10; ++t) {
    Sample s;
    s.image = test_util::random_tensor<float>({10, 10, 3}, rng, 0.f, 1.f);
    s.mask = Tensor<float>::uninitialized({10, 10, 1});
    for (Index i = 0; i < s.mask.size(); ++i) s.mask.data()[i] = rng.bernoulli() ? 1.f : 0.f;

    AugmentDraw d;
    d.rot_k = rng.uniform_int(0, 3);
    d.hflip = rng.bernoulli();
    d.vflip = rng.bernoulli();

    Sample masked_then_aug;
    masked_then_aug.image = apply_mask(s.image, s.mask);
    masked_then_aug.mask = s.mask;
    auto lhs = augment(masked_then_aug, d);
    auto aug = augment(s, d);
    auto rhs = apply_mask(aug.image, aug.mask);
    CHECK(test_util::bitwise_equal(lhs.image, rhs));
  }
}

TEST_CASE("random augment draws keep images in range and masks binary") {
  Rng rng(406);
  AugmentSpec spec;
  for (int t = 0; t < 20; ++t) {
    Sample s;
    s.image = test_util::random_tensor<float>({12, 12, 3}, rng, 0.f, 1.f);
    s.mask = central_mask(12, 0.4);
    auto d = draw_augment(spec, rng);
    CHECK(d.rot_k >= 0);
    CHECK(d.rot_k <= 3);
    CHECK(std::abs(d.brightness) <= 0.06);
    CHECK(d.contrast >= 0.90);
    CHECK(d.contrast <= 1.10);
    CHECK(d.saturation >= 0.90);
    CHECK(d.saturation <= 1.10);
    CHECK(d.noise_sigma >= 0.0);
    CHECK(d.noise_sigma <= 0.02);
    auto out = augment(s, d);
    for (Index i = 0; i < out.image.size(); ++i) {
      CHECK(out.image[i] >= 0.f);
      CHECK(out.image[i] <= 1.f);
    }
    for (Index i = 0; i < out.mask.size(); ++i)
      CHECK((out.mask[i] == 0.f || out.mask[i] == 1.f));
  }
}

TEST_CASE("class weights follow N / (K n_c)") {
  std::vector<int> balanced;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 10; ++i) balanced.push_back(c);
  for (float w : class_weights(balanced, 4)) CHECK(w == doctest::Approx(1.0f));

  std::vector<int> skewed;
  for (int i = 0; i < 30; ++i) skewed.push_back(0);
  for (int i = 0; i < 10; ++i) skewed.push_back(1);
  auto w = class_weights(skewed, 2);
  CHECK(w[0] == doctest::Approx(40.0 / (2.0 * 30.0)).epsilon(1e-6));
  CHECK(w[0] == doctest::Approx(0.6667).epsilon(1e-3));
  CHECK(w[1] == doctest::Approx(2.0));

  // sum_c w_c n_c = N
  Rng rng(407);
  for (int t = 0; t < 10; ++t) {
    std::vector<int> labels;
    const int k = rng.uniform_int(2, 5);
    for (int c = 0; c < k; ++c)
      for (int i = 0, n = rng.uniform_int(1, 20); i < n; ++i) labels.push_back(c);
    auto ws = class_weights(labels, k);
    double acc = 0.0;
    for (int l : labels) acc += ws[static_cast<std::size_t>(l)];
    CHECK(acc == doctest::Approx(static_cast<double>(labels.size())).epsilon(1e-4));
  }

  CHECK_THROWS_AS(class_weights({0, 0, 2}, 4), std::invalid_argument);
}

TEST_CASE("synthetic textures are labeled, deterministic and separable") {
  auto small = synth_textures(2, 32, 7);
  REQUIRE(small.samples.size() == 8);
  const std::vector<int> want = {0, 0, 1, 1, 2, 2, 3, 3};
  for (std::size_t i = 0; i < 8; ++i) CHECK(small.samples[i].label == want[i]);

  auto again = synth_textures(2, 32, 7);
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(test_util::bitwise_equal(small.samples[i].image, again.samples[i].image));

  // Nearest-centroid oracle on per-channel mean/std features.
  auto ds = synth_textures(50, 32, 11);
  auto features = [](const Sample& s) {
    std::array<double, 6> f{};
    const Index n = s.image.size() / 3;
    for (Index c = 0; c < 3; ++c) {
      double m = 0.0;
      for (Index p = 0; p < n; ++p) m += s.image[p * 3 + c];
      m /= static_cast<double>(n);
      double v = 0.0;
      for (Index p = 0; p < n; ++p) {
        const double d = s.image[p * 3 + c] - m;
        v += d * d;
      }
      f[static_cast<std::size_t>(c)] = m;
      f[static_cast<std::size_t>(c + 3)] = std::sqrt(v / static_cast<double>(n));
    }
    return f;
  };

  std::array<std::array<double, 6>, 4> centroids{};
  std::array<int, 4> counts{};
  for (const auto& s : ds.samples) {
    auto f = features(s);
    for (int j = 0; j < 6; ++j) centroids[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(j)] += f[static_cast<std::size_t>(j)];
    counts[static_cast<std::size_t>(s.label)]++;
  }
  for (int c = 0; c < 4; ++c)
    for (int j = 0; j < 6; ++j) centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] /= counts[static_cast<std::size_t>(c)];

  int correct = 0;
  for (const auto& s : ds.samples) {
    auto f = features(s);
    int best = 0;
    double best_d = 1e18;
    for (int c = 0; c < 4; ++c) {
      double d = 0.0;
      for (int j = 0; j < 6; ++j) {
        const double diff = f[static_cast<std::size_t>(j)] - centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += best == s.label;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(ds.samples.size()) >= 0.95);
}

TEST_CASE("png round trip and jpeg decoding through the loader") {
  const fs::path dir = fs::temp_directory_path() / "smarc_imgio_test";
  fs::create_directories(dir);

  Rng rng(408);
  auto img = test_util::random_tensor<float>({24, 24, 3}, rng, 0.f, 1.f);
  const std::string png_path = (dir / "x.png").string();
  write_png(png_path, img);
  auto back = read_image(png_path);
  REQUIRE(back.shape() == img.shape());
  for (Index i = 0; i < img.size(); ++i)
    CHECK(std::abs(back[i] - img[i]) <= 0.5f / 255.f + 1e-6f);

  auto flat = Tensor<float>::full({16, 16, 3}, 0.5f);
  const std::string jpg_path = (dir / "y.jpg").string();
  write_test_jpeg(jpg_path, flat);
  auto jback = read_image(jpg_path);
  REQUIRE(jback.shape() == Shape{16, 16, 3});
  for (Index i = 0; i < jback.size(); ++i) CHECK(std::abs(jback[i] - 0.5f) < 0.05f);

  CHECK_THROWS_AS(read_image((dir / "missing.png").string()), std::runtime_error);

  const std::string junk = (dir / "junk.png").string();
  std::FILE* f = std::fopen(junk.c_str(), "wb");
  std::fputs("not an image", f);
  std::fclose(f);
  CHECK_THROWS_AS(read_image(junk), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("directory ingestion maps sorted class names to indices") {
  const fs::path root = fs::temp_directory_path() / "smarc_dataset_test";
  fs::remove_all(root);
  for (const char* cls : {"wood", "grass"}) fs::create_directories(root / cls);

  Rng rng(409);
  write_png((root / "grass" / "b.png").string(),
            test_util::random_tensor<float>({20, 20, 3}, rng, 0.f, 1.f));
  write_png((root / "grass" / "a.png").string(),
            test_util::random_tensor<float>({20, 20, 3}, rng, 0.f, 1.f));
  write_png((root / "wood" / "z.png").string(),
            test_util::random_tensor<float>({28, 28, 3}, rng, 0.f, 1.f));

  auto ds = load_dataset_dir(root.string(), 16);
  CHECK(ds.class_names == std::vector<std::string>{"grass", "wood"});
  REQUIRE(ds.samples.size() == 3);
  CHECK(ds.samples[0].label == 0);  // grass/a.png (sorted)
  CHECK(ds.samples[0].source_path.find("a.png") != std::string::npos);
  CHECK(ds.samples[2].label == 1);
  for (const auto& s : ds.samples) CHECK(s.image.shape() == Shape{16, 16, 3});

  // split manifest records path, split and label
  auto r = split(ds, SplitSpec{1.0, 0.0, 0.0, 42, false});
  const std::string manifest = (root / "split.tsv").string();
  write_split_manifest(manifest, ds, r);
  std::ifstream is(manifest);
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) {
    ++lines;
    CHECK(line.find('\t') != std::string::npos);
    CHECK(line.find("train") != std::string::npos);
  }
  CHECK(lines == 3);
  fs::remove_all(root);
}

TEST_CASE("assign_central_masks gives every sample the shared mask") {
  auto ds = synth_textures(2, 32, 5);
  assign_central_masks(ds, 0.25);
  const Index expect = static_cast<Index>(std::lround(32.0 * 0.5)) *
                       static_cast<Index>(std::lround(32.0 * 0.5));
  for (const auto& s : ds.samples) CHECK(count_ones(s.mask) == expect);
}

TEST_CASE("make_batch stacks masked inputs, targets and labels") {
  auto ds = synth_textures(1, 16, 3);
  assign_central_masks(ds, 0.25);
  auto batch = make_batch(ds.samples);
  CHECK(batch.input.shape() == Shape{4, 16, 16, 3});
  CHECK(batch.target.shape() == Shape{4, 16, 16, 3});
  CHECK(batch.mask.shape() == Shape{4, 16, 16, 1});
  CHECK(batch.labels == std::vector<int>{0, 1, 2, 3});
  for (Index b = 0; b < 4; ++b)
    for (Index p = 0; p < 256; ++p) {
      const float mv = batch.mask[b * 256 + p];
      for (Index c = 0; c < 3; ++c)
        CHECK(batch.input[(b * 256 + p) * 3 + c] ==
              batch.target[(b * 256 + p) * 3 + c] * mv);
    }
}
