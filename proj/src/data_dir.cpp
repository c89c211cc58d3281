#include "smarc/data.hpp"
#include "smarc/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace smarc {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

inline float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

// Near-uniform light gray with fine speckle.
void gen_concrete(Tensor<float>& img, Index size, Rng& rng) {
  const double base = 0.55 + 0.12 * rng.uniform();
  for (Index p = 0; p < size * size; ++p) {
    const double v = base + 0.035 * rng.normal();
    img.data()[p * 3 + 0] = clamp01(v);
    img.data()[p * 3 + 1] = clamp01(v);
    img.data()[p * 3 + 2] = clamp01(0.97 * v);
  }
}

// High-frequency directional green noise.
void gen_grass(Tensor<float>& img, Index size, Rng& rng) {
  const double theta = rng.uniform(1.2, 1.9);  // near-vertical blades
  const double freq = kTwoPi * rng.uniform(0.30, 0.45);
  const double phase = rng.uniform(0.0, kTwoPi);
  const double base = 0.40 + 0.08 * rng.uniform();
  const double cs = std::cos(theta), sn = std::sin(theta);
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const double u = static_cast<double>(x) * cs + static_cast<double>(y) * sn;
      const double g = base + 0.16 * std::sin(freq * u + phase) + 0.06 * rng.normal();
      float* px = img.data() + (y * size + x) * 3;
      px[0] = clamp01(0.55 * g);
      px[1] = clamp01(g);
      px[2] = clamp01(0.35 * g);
    }
}

// Blobs from a soft-thresholded sum of low-frequency cosines.
void gen_rock(Tensor<float>& img, Index size, Rng& rng) {
  double kx[5], ky[5], ph[5];
  for (int i = 0; i < 5; ++i) {
    kx[i] = kTwoPi * rng.uniform(0.5, 3.0) / static_cast<double>(size);
    ky[i] = kTwoPi * rng.uniform(0.5, 3.0) / static_cast<double>(size);
    ph[i] = rng.uniform(0.0, kTwoPi);
  }
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      double v = 0.0;
      for (int i = 0; i < 5; ++i)
        v += std::cos(kx[i] * static_cast<double>(x) + ky[i] * static_cast<double>(y) + ph[i]);
      const double s = 0.34 + 0.16 * std::tanh(1.5 * v) + 0.02 * rng.normal();
      float* px = img.data() + (y * size + x) * 3;
      px[0] = clamp01(0.96 * s);
      px[1] = clamp01(s);
      px[2] = clamp01(1.04 * s);
    }
}

// Low-frequency brown stripes with wavy jitter.
void gen_wood(Tensor<float>& img, Index size, Rng& rng) {
  const double stripes = rng.uniform(5.0, 9.0);
  const double phase = rng.uniform(0.0, kTwoPi);
  const double wobble = rng.uniform(1.0, 2.5);
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const double warp = wobble * std::sin(kTwoPi * 2.0 * static_cast<double>(y) / static_cast<double>(size) + phase);
      const double v = 0.5 + 0.5 * std::sin(kTwoPi * stripes * static_cast<double>(x) / static_cast<double>(size) + warp + phase) +
                       0.03 * rng.normal();
      float* px = img.data() + (y * size + x) * 3;
      px[0] = clamp01(0.35 + 0.40 * v);
      px[1] = clamp01(0.22 + 0.28 * v);
      px[2] = clamp01(0.12 + 0.14 * v);
    }
}

}  // namespace

Dataset synth_textures(int n_per_class, Index size, std::uint64_t seed) {
  if (n_per_class < 1) fail("synth_textures: n_per_class must be >= 1");
  Dataset ds;
  ds.class_names = {"concrete", "grass", "rock", "wood"};  // sorted name order
  Rng base(seed);
  for (int label = 0; label < 4; ++label) {
    for (int i = 0; i < n_per_class; ++i) {
      Rng rng = base.fork((static_cast<std::uint64_t>(label) << 32) | static_cast<std::uint64_t>(i));
      Sample s;
      s.image = Tensor<float>::uninitialized({size, size, 3});
      switch (label) {
        case 0: gen_concrete(s.image, size, rng); break;
        case 1: gen_grass(s.image, size, rng); break;
        case 2: gen_rock(s.image, size, rng); break;
        default: gen_wood(s.image, size, rng); break;
      }
      s.mask = Tensor<float>::ones({size, size, 1});
      s.label = label;
      s.source_path = "synthetic/" + ds.class_names[static_cast<std::size_t>(label)] + "/" +
                      std::to_string(i);
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

Dataset load_dataset_dir(const std::string& root, Index target_size) {
  if (!fs::is_directory(root)) fail("load_dataset_dir: " + root + " is not a directory");

  Dataset ds;
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) fail("load_dataset_dir: no class directories under " + root);

  for (const auto& dir : class_dirs) ds.class_names.push_back(dir.filename().string());

  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[label])) {
      if (!e.is_regular_file()) continue;
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Sample s;
      s.image = resize_bilinear(read_image(f.string()), target_size, target_size);
      s.mask = Tensor<float>::ones({target_size, target_size, 1});
      s.label = static_cast<int>(label);
      s.source_path = f.string();
      ds.samples.push_back(std::move(s));
    }
  }
  if (ds.samples.empty()) fail("load_dataset_dir: no images found under " + root);
  return ds;
}

void write_split_manifest(const std::string& path, const Dataset& ds, const SplitResult& split) {
  std::ofstream os(path);
  if (!os) fail("write_split_manifest: cannot open " + path);
  auto emit = [&](const std::vector<int>& idx, const char* name) {
    for (int i : idx) {
      const Sample& s = ds.samples[static_cast<std::size_t>(i)];
      os << s.source_path << '\t' << name << '\t' << s.label << '\n';
    }
  };
  emit(split.train, "train");
  emit(split.val, "val");
  emit(split.test, "test");
}

}  // namespace smarc
