#include "one/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace one {

namespace {

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<unsigned char> bytes(size);
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw DataError("short read from '" + path + "'");
  return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size()) {
    throw DataError("'" + path + "' truncated: need 4 bytes at offset " + std::to_string(off) +
                    ", file has " + std::to_string(b.size()));
  }
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

void check_length(const std::string& path, std::size_t expected, std::size_t actual) {
  if (actual != expected) {
    throw DataError("'" + path + "' truncated: expected " + std::to_string(expected) +
                    " bytes, file has " + std::to_string(actual));
  }
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, int class_count,
                 const std::string& split) {
  const auto img = read_all(images_path);
  const auto magic_i = be32(img, 0, images_path);
  if (magic_i != 0x00000803u) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08X", magic_i);
    throw DataError("'" + images_path + "' bad magic at byte 0: expected 0x00000803, got " + buf);
  }
  const auto n = be32(img, 4, images_path);
  const auto h = be32(img, 8, images_path);
  const auto w = be32(img, 12, images_path);
  check_length(images_path, 16 + static_cast<std::size_t>(n) * h * w, img.size());

  const auto lab = read_all(labels_path);
  const auto magic_l = be32(lab, 0, labels_path);
  if (magic_l != 0x00000801u) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08X", magic_l);
    throw DataError("'" + labels_path + "' bad magic at byte 0: expected 0x00000801, got " + buf);
  }
  const auto ln = be32(lab, 4, labels_path);
  check_length(labels_path, 8 + static_cast<std::size_t>(ln), lab.size());
  if (ln != n) {
    throw DataError("label count " + std::to_string(ln) + " does not match image count " +
                    std::to_string(n));
  }

  Dataset ds;
  ds.n = static_cast<int>(n);
  ds.channels = 1;
  ds.height = static_cast<int>(h);
  ds.width = static_cast<int>(w);
  ds.class_count = class_count;
  ds.split = split;
  ds.images.resize(static_cast<std::size_t>(n) * h * w);
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    ds.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const int y = lab[8 + i];
    if (y < 0 || y >= class_count) {
      throw DataError("'" + labels_path + "' label " + std::to_string(y) + " at index " +
                      std::to_string(i) + " outside [0, " + std::to_string(class_count) + ")");
    }
    ds.labels[i] = y;
  }
  return ds;
}

Dataset load_cifar10_bin(const std::vector<std::string>& paths, const std::string& split) {
  constexpr std::size_t kRecord = 3073;  // label byte + 3*32*32 pixels
  constexpr int kDim = 32;
  if (paths.empty()) throw DataError("cifar10: no input files");

  Dataset ds;
  ds.channels = 3;
  ds.height = kDim;
  ds.width = kDim;
  ds.class_count = 10;
  ds.split = split;

  for (const auto& path : paths) {
    const auto bytes = read_all(path);
    if (bytes.empty() || bytes.size() % kRecord != 0) {
      throw DataError("'" + path + "': size " + std::to_string(bytes.size()) +
                      " is not a multiple of the 3073-byte record");
    }
    const std::size_t records = bytes.size() / kRecord;
    for (std::size_t r = 0; r < records; ++r) {
      const unsigned char* rec = bytes.data() + r * kRecord;
      const int y = rec[0];
      if (y >= 10) {
        throw DataError("'" + path + "' label " + std::to_string(y) + " in record " +
                        std::to_string(r) + " outside [0, 10)");
      }
      ds.labels.push_back(y);
      for (std::size_t p = 0; p < kRecord - 1; ++p)
        ds.images.push_back(static_cast<float>(rec[1 + p]) / 255.0f);
    }
    ds.n += static_cast<int>(records);
  }
  return ds;
}

NormStats compute_norm_stats(const Dataset& ds) {
  NormStats stats;
  const int C = ds.channels;
  const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
  stats.mean.assign(C, 0.0f);
  stats.stddev.assign(C, 0.0f);
  for (int c = 0; c < C; ++c) {
    double sum = 0, sum2 = 0;
    for (int n = 0; n < ds.n; ++n) {
      const float* px = ds.images.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        sum += px[p];
        sum2 += static_cast<double>(px[p]) * px[p];
      }
    }
    const double count = static_cast<double>(ds.n) * plane;
    const double mean = sum / count;
    const double var = std::max(0.0, sum2 / count - mean * mean);
    stats.mean[c] = static_cast<float>(mean);
    // constant channels get unit scale rather than a division by zero
    stats.stddev[c] = var > 0 ? static_cast<float>(std::sqrt(var)) : 1.0f;
  }
  return stats;
}

void apply_normalization(Dataset& ds, const NormStats& stats) {
  if (static_cast<int>(stats.mean.size()) != ds.channels) {
    throw DataError("normalisation stats cover " + std::to_string(stats.mean.size()) +
                    " channels, dataset has " + std::to_string(ds.channels));
  }
  const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
  for (int n = 0; n < ds.n; ++n)
    for (int c = 0; c < ds.channels; ++c) {
      float* px = ds.images.data() + (static_cast<std::size_t>(n) * ds.channels + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) px[p] = (px[p] - stats.mean[c]) / stats.stddev[c];
    }
  ds.stats = stats;
}

Dataset subset(const Dataset& ds, int n, std::uint64_t seed) {
  if (n <= 0 || n > ds.n) {
    throw DataError("subset: requested " + std::to_string(n) + " of " + std::to_string(ds.n) +
                    " samples");
  }
  const int C = ds.class_count;
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(C));
  for (int i = 0; i < ds.n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  std::vector<int> chosen;
  chosen.reserve(static_cast<std::size_t>(n));
  for (int c = 0; c < C; ++c) {
    const int quota = n / C + (c < n % C ? 1 : 0);
    auto& pool = by_class[static_cast<std::size_t>(c)];
    if (static_cast<int>(pool.size()) < quota) {
      throw DataError("subset: class " + std::to_string(c) + " has only " +
                      std::to_string(pool.size()) + " samples, quota is " + std::to_string(quota));
    }
    auto rng = Rng::derive(seed, static_cast<std::uint64_t>(c));
    rng.shuffle(pool);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + quota);
  }
  auto rng = Rng::derive(seed, 0xFFFFu);
  rng.shuffle(chosen);

  Dataset out;
  out.n = n;
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  out.class_count = C;
  out.split = ds.split + "-subset";
  out.stats = ds.stats;
  const std::size_t ss = ds.sample_size();
  out.images.resize(static_cast<std::size_t>(n) * ss);
  out.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int src = chosen[static_cast<std::size_t>(i)];
    std::copy_n(ds.images.begin() + static_cast<std::ptrdiff_t>(src * ss), ss,
                out.images.begin() + static_cast<std::ptrdiff_t>(i) * static_cast<std::ptrdiff_t>(ss));
    out.labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(src)];
  }
  return out;
}

std::pair<Tensor, std::vector<int>> make_batch(const Dataset& ds, const std::vector<int>& idx) {
  const std::size_t ss = ds.sample_size();
  std::vector<float> data(idx.size() * ss);
  std::vector<int> labels(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const int src = idx[i];
    if (src < 0 || src >= ds.n)
      throw DataError("batch index " + std::to_string(src) + " outside dataset of " +
                      std::to_string(ds.n));
    std::copy_n(ds.images.begin() + static_cast<std::ptrdiff_t>(src * ss), ss,
                data.begin() + static_cast<std::ptrdiff_t>(i * ss));
    labels[i] = ds.labels[static_cast<std::size_t>(src)];
  }
  return {Tensor::from_data({static_cast<int>(idx.size()), ds.channels, ds.height, ds.width},
                            std::move(data)),
          std::move(labels)};
}

void augment_batch(std::vector<float>& images, int batch, int channels, int height, int width,
                   const AugmentSpec& spec, Rng& rng) {
  if (!spec.enabled()) return;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const std::size_t ss = static_cast<std::size_t>(channels) * plane;
  std::vector<float> tmp(ss);
  for (int b = 0; b < batch; ++b) {
    float* img = images.data() + static_cast<std::size_t>(b) * ss;
    if (spec.random_crop) {
      const int p = spec.pad;
      const int oy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(2 * p + 1)));
      const int ox = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(2 * p + 1)));
      for (int c = 0; c < channels; ++c) {
        const float* src = img + static_cast<std::size_t>(c) * plane;
        float* dst = tmp.data() + static_cast<std::size_t>(c) * plane;
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x) {
            const int sy = y + oy - p;
            const int sx = x + ox - p;
            const bool in = sy >= 0 && sy < height && sx >= 0 && sx < width;
            dst[static_cast<std::size_t>(y) * width + x] =
                in ? src[static_cast<std::size_t>(sy) * width + sx] : 0.0f;
          }
      }
      std::copy(tmp.begin(), tmp.end(), img);
    }
    if (spec.hflip && rng.next_below(2) == 1) {
      for (int c = 0; c < channels; ++c) {
        float* px = img + static_cast<std::size_t>(c) * plane;
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width / 2; ++x)
            std::swap(px[static_cast<std::size_t>(y) * width + x],
                      px[static_cast<std::size_t>(y) * width + (width - 1 - x)]);
      }
    }
  }
}

BatchIterator::BatchIterator(const Dataset& ds, int batch_size, std::uint64_t seed,
                             AugmentSpec aug)
    : ds_(&ds), bs_(batch_size), seed_(seed), aug_(aug) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  perm_.resize(static_cast<std::size_t>(ds.n));
  std::iota(perm_.begin(), perm_.end(), 0);
  start_epoch(0);
}

void BatchIterator::start_epoch(int epoch) {
  auto rng = Rng::derive(seed_, 2 * static_cast<std::uint64_t>(epoch));
  std::iota(perm_.begin(), perm_.end(), 0);
  rng.shuffle(perm_);
  aug_rng_ = Rng::derive(seed_, 2 * static_cast<std::uint64_t>(epoch) + 1);
  cursor_ = 0;
}

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= perm_.size()) return false;
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(bs_),
                                                 perm_.size() - cursor_);
  std::vector<int> idx(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                       perm_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
  cursor_ += take;
  auto [images, labels] = make_batch(*ds_, idx);
  if (aug_.enabled()) {
    augment_batch(images.data(), static_cast<int>(take), ds_->channels, ds_->height, ds_->width,
                  aug_, aug_rng_);
  }
  out.images = std::move(images);
  out.labels = std::move(labels);
  return true;
}

}  // namespace one
