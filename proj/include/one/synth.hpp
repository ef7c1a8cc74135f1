#pragma once

// Deterministic synthetic image sets written in the exact on-disk formats the
// loaders consume (IDX pairs, CIFAR-10 3073-byte records). Used when no real
// dataset is present under the data root: class templates are fixed blob
// mixtures, samples add shifts, amplitude jitter, pixel noise, and a dose of
// train-split label noise so that regularisation has something to do.

#include <cstdint>
#include <string>

namespace one {

struct SynthSpec {
  int train_n = 60000;
  int test_n = 10000;
  int classes = 10;
  // generator seed is a fixed constant so dataset bytes never depend on the
  // training run's seed
  std::uint64_t seed = 0x53594E5448ULL;
  int shift = 3;             // max translation, pixels
  double noise = 42.0;       // uniform pixel noise amplitude, u8 scale
  double amp_lo = 0.55;
  double amp_hi = 1.15;
  double label_noise = 0.14; // train-split fraction given a random wrong label
};

// Writes train/test IDX pairs with the canonical MNIST file names into dir.
void write_synth_mnist(const std::string& dir, const SynthSpec& spec = {});

// Writes data_batch_1..5.bin and test_batch.bin into dir (10k records per
// train file at default sizes).
void write_synth_cifar10(const std::string& dir, const SynthSpec& spec = {});

// True if the canonical file set under dir is already complete.
bool mnist_files_present(const std::string& dir);
bool cifar10_files_present(const std::string& dir);

// Canonical file names the loaders and generators agree on.
std::string mnist_train_images(const std::string& dir);
std::string mnist_train_labels(const std::string& dir);
std::string mnist_test_images(const std::string& dir);
std::string mnist_test_labels(const std::string& dir);
std::string cifar10_train_file(const std::string& dir, int index);  // 1..5
std::string cifar10_test_file(const std::string& dir);

}  // namespace one
