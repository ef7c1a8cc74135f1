#include "one/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "one/error.hpp"
#include "one/rng.hpp"

namespace one {

namespace {

namespace fs = std::filesystem;

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

// Per-class template: a fixed mixture of soft blobs on the full grid. Classes
// overlap substantially, which is what keeps the task from being trivial.
std::vector<double> class_template(std::uint64_t seed, int cls, int channel, int dim) {
  auto rng = Rng::derive(seed, 0x7E0000ull + static_cast<std::uint64_t>(cls) * 8 +
                                   static_cast<std::uint64_t>(channel));
  std::vector<double> img(static_cast<std::size_t>(dim) * dim, 0.0);
  const int blobs = 3;
  for (int b = 0; b < blobs; ++b) {
    const double cx = 0.2 * dim + rng.next_uniform() * 0.6 * dim;
    const double cy = 0.2 * dim + rng.next_uniform() * 0.6 * dim;
    const double sigma = dim * (0.08 + rng.next_uniform() * 0.10);
    const double amp = 120.0 + rng.next_uniform() * 135.0;
    for (int y = 0; y < dim; ++y)
      for (int x = 0; x < dim; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        img[static_cast<std::size_t>(y) * dim + x] += amp * std::exp(-d2 / (2 * sigma * sigma));
      }
  }
  for (auto& v : img) v = std::min(v, 255.0);
  return img;
}

struct SampleDraw {
  int dx, dy;
  double amp;
  bool flip_label;
  int noisy_label;
};

// One sample's randomness, drawn in a fixed order.
SampleDraw draw_sample(Rng& rng, const SynthSpec& spec) {
  SampleDraw d;
  d.dx = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(2 * spec.shift + 1))) -
         spec.shift;
  d.dy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(2 * spec.shift + 1))) -
         spec.shift;
  d.amp = spec.amp_lo + rng.next_uniform() * (spec.amp_hi - spec.amp_lo);
  d.flip_label = rng.next_uniform() < spec.label_noise;
  d.noisy_label = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.classes)));
  return d;
}

unsigned char render_pixel(const std::vector<double>& tpl, int dim, int x, int y,
                           const SampleDraw& d, double noise, Rng& rng) {
  const int sx = x - d.dx;
  const int sy = y - d.dy;
  double v = 0.0;
  if (sx >= 0 && sx < dim && sy >= 0 && sy < dim) v = tpl[static_cast<std::size_t>(sy) * dim + sx];
  v = v * d.amp + (rng.next_uniform() * 2.0 - 1.0) * noise;
  return static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
}

void write_idx_pair(const std::string& images_path, const std::string& labels_path,
                    const SynthSpec& spec, int n, std::uint64_t stream) {
  constexpr int dim = 28;
  std::vector<std::vector<double>> templates;
  for (int c = 0; c < spec.classes; ++c) templates.push_back(class_template(spec.seed, c, 0, dim));

  auto img_out = open_out(images_path);
  write_be32(img_out, 0x00000803u);
  write_be32(img_out, static_cast<std::uint32_t>(n));
  write_be32(img_out, dim);
  write_be32(img_out, dim);

  auto lab_out = open_out(labels_path);
  write_be32(lab_out, 0x00000801u);
  write_be32(lab_out, static_cast<std::uint32_t>(n));

  auto rng = Rng::derive(spec.seed, stream);
  const bool noisy_labels = stream == 1;  // only the train split gets label noise
  std::vector<unsigned char> px(static_cast<std::size_t>(dim) * dim);
  for (int i = 0; i < n; ++i) {
    const int cls = i % spec.classes;
    const auto d = draw_sample(rng, spec);
    for (int y = 0; y < dim; ++y)
      for (int x = 0; x < dim; ++x)
        px[static_cast<std::size_t>(y) * dim + x] =
            render_pixel(templates[static_cast<std::size_t>(cls)], dim, x, y, d, spec.noise, rng);
    img_out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    const unsigned char label =
        static_cast<unsigned char>(noisy_labels && d.flip_label ? d.noisy_label : cls);
    lab_out.write(reinterpret_cast<const char*>(&label), 1);
  }
  if (!img_out || !lab_out) throw DataError("write failure under '" + images_path + "'");
}

}  // namespace

std::string mnist_train_images(const std::string& dir) { return dir + "/train-images-idx3-ubyte"; }
std::string mnist_train_labels(const std::string& dir) { return dir + "/train-labels-idx1-ubyte"; }
std::string mnist_test_images(const std::string& dir) { return dir + "/t10k-images-idx3-ubyte"; }
std::string mnist_test_labels(const std::string& dir) { return dir + "/t10k-labels-idx1-ubyte"; }
std::string cifar10_train_file(const std::string& dir, int index) {
  return dir + "/data_batch_" + std::to_string(index) + ".bin";
}
std::string cifar10_test_file(const std::string& dir) { return dir + "/test_batch.bin"; }

bool mnist_files_present(const std::string& dir) {
  return fs::exists(mnist_train_images(dir)) && fs::exists(mnist_train_labels(dir)) &&
         fs::exists(mnist_test_images(dir)) && fs::exists(mnist_test_labels(dir));
}

bool cifar10_files_present(const std::string& dir) {
  for (int i = 1; i <= 5; ++i)
    if (!fs::exists(cifar10_train_file(dir, i))) return false;
  return fs::exists(cifar10_test_file(dir));
}

void write_synth_mnist(const std::string& dir, const SynthSpec& spec) {
  fs::create_directories(dir);
  write_idx_pair(mnist_train_images(dir), mnist_train_labels(dir), spec, spec.train_n, 1);
  write_idx_pair(mnist_test_images(dir), mnist_test_labels(dir), spec, spec.test_n, 2);
}

void write_synth_cifar10(const std::string& dir, const SynthSpec& spec) {
  constexpr int dim = 32;
  fs::create_directories(dir);
  std::vector<std::vector<std::vector<double>>> templates;  // [class][channel]
  for (int c = 0; c < spec.classes; ++c) {
    templates.push_back({class_template(spec.seed, c, 1, dim), class_template(spec.seed, c, 2, dim),
                         class_template(spec.seed, c, 3, dim)});
  }

  const int files = 5;
  const int per_file = spec.train_n / files;
  auto rng = Rng::derive(spec.seed, 3);
  std::vector<unsigned char> plane(static_cast<std::size_t>(dim) * dim);

  auto write_record = [&](std::ofstream& out, int cls, bool noisy_labels) {
    const auto d = draw_sample(rng, spec);
    const unsigned char label =
        static_cast<unsigned char>(noisy_labels && d.flip_label ? d.noisy_label : cls);
    out.write(reinterpret_cast<const char*>(&label), 1);
    for (int ch = 0; ch < 3; ++ch) {
      const auto& tpl = templates[static_cast<std::size_t>(cls)][static_cast<std::size_t>(ch)];
      for (int y = 0; y < dim; ++y)
        for (int x = 0; x < dim; ++x)
          plane[static_cast<std::size_t>(y) * dim + x] =
              render_pixel(tpl, dim, x, y, d, spec.noise, rng);
      out.write(reinterpret_cast<const char*>(plane.data()),
                static_cast<std::streamsize>(plane.size()));
    }
  };

  for (int f = 1; f <= files; ++f) {
    auto out = open_out(cifar10_train_file(dir, f));
    for (int i = 0; i < per_file; ++i) write_record(out, ((f - 1) * per_file + i) % spec.classes,
                                                    /*noisy_labels=*/true);
    if (!out) throw DataError("write failure under '" + dir + "'");
  }
  rng = Rng::derive(spec.seed, 4);
  auto out = open_out(cifar10_test_file(dir));
  for (int i = 0; i < spec.test_n; ++i) write_record(out, i % spec.classes, /*noisy_labels=*/false);
  if (!out) throw DataError("write failure under '" + dir + "'");
}

}  // namespace one
