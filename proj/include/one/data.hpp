#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "one/error.hpp"
#include "one/rng.hpp"
#include "one/tensor.hpp"

namespace one {

// Per-channel normalisation statistics, always computed on the train split
// and reused verbatim for the test split.
struct NormStats {
  std::vector<float> mean, stddev;
  bool empty() const { return mean.empty(); }
};

struct Dataset {
  std::vector<float> images;  // N*C*H*W, row-major
  std::vector<int> labels;    // in [0, class_count)
  int n = 0, channels = 0, height = 0, width = 0;
  int class_count = 0;
  std::string split;
  NormStats stats;  // stats applied to `images`, empty if raw

  std::size_t sample_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
};

// IDX pair (big-endian, magic 0x803 images / 0x801 labels). Values scaled to
// [0,1]; normalisation is a separate step.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, int class_count,
                 const std::string& split);

// CIFAR-10 binary files of 3073-byte records (label + 3x32x32 planes).
Dataset load_cifar10_bin(const std::vector<std::string>& paths, const std::string& split);

NormStats compute_norm_stats(const Dataset& ds);
void apply_normalization(Dataset& ds, const NormStats& stats);

// Stratified sample of n items: class quotas differ by at most one.
Dataset subset(const Dataset& ds, int n, std::uint64_t seed);

// Desk-scale train subsets are carved with this fixed seed so every method
// and every run seed trains on the same reduced dataset; the run seed only
// steers initialisation and batch order.
inline constexpr std::uint64_t kSubsetSeed = 101;

// Gather the given sample indices into an NxCxHxW tensor plus labels.
std::pair<Tensor, std::vector<int>> make_batch(const Dataset& ds, const std::vector<int>& idx);

struct AugmentSpec {
  bool random_crop = false;
  int pad = 4;
  bool hflip = false;
  bool enabled() const { return random_crop || hflip; }
};

// Applies crop/flip per sample in place; draw order is fixed so results are a
// pure function of the rng state.
void augment_batch(std::vector<float>& images, int batch, int channels, int height, int width,
                   const AugmentSpec& spec, Rng& rng);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

// Shuffled mini-batches covering every index exactly once per epoch; the
// permutation and augmentation draws are determined by (seed, epoch).
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, int batch_size, std::uint64_t seed, AugmentSpec aug = {});

  void start_epoch(int epoch);
  bool next(Batch& out);
  int batches_per_epoch() const { return (ds_->n + bs_ - 1) / bs_; }
  int batch_size() const { return bs_; }

 private:
  const Dataset* ds_;
  int bs_;
  std::uint64_t seed_;
  AugmentSpec aug_;
  std::vector<int> perm_;
  std::size_t cursor_ = 0;
  Rng aug_rng_{0};
};

}  // namespace one
