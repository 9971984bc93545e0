#pragma once

// Synthetic images, corpora and scratch directories shared by the tests.

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>

#include <unistd.h>

#include "firegan/image.hpp"
#include "firegan/io.hpp"
#include "firegan/random.hpp"
#include "firegan/training.hpp"

namespace firegan::testing {

namespace fs = std::filesystem;

// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("firegan_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline Image random_u8(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(h) * w * c);
  for (auto& x : v) x = static_cast<float>(rng.below(256));
  return Image(h, w, c, Domain::file_u8, std::move(v));
}

inline Image random_model(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(h) * w * c);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return Image(h, w, c, Domain::model_signed, std::move(v));
}

// Colored gradient rotated by i * 0.785 rad; infrared is a fixed
// inverted-luma transform of it. Both in the 8-bit file domain.
inline ImagePair gradient_pair(int i, int size) {
  std::vector<float> vis(static_cast<std::size_t>(size) * size * 3), ir(static_cast<std::size_t>(size) * size);
  const double a = i * 0.785;
  double umin = 1e9, umax = -1e9, vmin = 1e9, vmax = -1e9;
  std::vector<double> us, vs;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double fx = x / (size - 1.0), fy = y / (size - 1.0);
      const double u = std::cos(a) * fx + std::sin(a) * fy, v = -std::sin(a) * fx + std::cos(a) * fy;
      us.push_back(u);
      vs.push_back(v);
      umin = std::min(umin, u);
      umax = std::max(umax, u);
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
  for (std::size_t k = 0; k < us.size(); ++k) {
    const double u = (us[k] - umin) / (umax - umin + 1e-9), v = (vs[k] - vmin) / (vmax - vmin + 1e-9);
    const double r = u, g = v, b = 0.5 + 0.4 * std::sin(std::numbers::pi * (u + v) + i);
    const double t = 1.0 - (0.5 * r + 0.3 * g + 0.2 * b);
    vis[3 * k] = static_cast<float>(std::round(255 * r));
    vis[3 * k + 1] = static_cast<float>(std::round(255 * g));
    vis[3 * k + 2] = static_cast<float>(std::round(255 * b));
    ir[k] = static_cast<float>(std::round(255 * t));
  }
  ImagePair p;
  p.visible = Image(size, size, 3, Domain::file_u8, std::move(vis));
  p.infrared = Image(size, size, 1, Domain::file_u8, std::move(ir));
  char id[16];
  std::snprintf(id, sizeof id, "p%03d", i);
  p.id = id;
  return p;
}

// Model-domain, 3-channel-infrared, train-tagged gradient pairs.
inline std::vector<ImagePair> gradient_pairs(int n, int size, int first = 0) {
  std::vector<ImagePair> out;
  for (int i = first; i < first + n; ++i) out.push_back(prepare_pair(gradient_pair(i, size), 0, Lineage::train));
  return out;
}

// Writes <id>_rgb.png / <id>_nir.png gradient pairs into dir.
inline void write_corpus(const fs::path& dir, int n, int size, int first = 0) {
  fs::create_directories(dir);
  for (int i = first; i < first + n; ++i) {
    const auto p = gradient_pair(i, size);
    io::write_image(dir / (p.id + "_rgb.png"), p.visible);
    io::write_image(dir / (p.id + "_nir.png"), p.infrared);
  }
}

// Small networks for fast training tests.
inline ModelConfig tiny_models(bool unet = true, int g1_base = 8, int other_base = 4) {
  ModelConfig m;
  m.g1 = NetworkSpec::g1(unet);
  m.g1.depth = 2;
  m.g1.base_filters = g1_base;
  m.g2.base_filters = other_base;
  m.d.base_filters = other_base;
  m.d.depth = 2;
  return m;
}

inline TrainingConfig tiny_training() {
  TrainingConfig t;
  t.image_size = 0;
  t.validate_each_epoch = false;
  t.lr_generators = 5e-4;
  t.lr_discriminators = 1e-3;
  return t;
}

}  // namespace firegan::testing
