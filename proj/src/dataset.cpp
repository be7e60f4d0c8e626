#include "spm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "spm/errors.hpp"
#include "spm/rng.hpp"

namespace spm {

namespace {

constexpr std::int64_t kRecordBytes = 3073;  // 1 label + 3 * 32 * 32
constexpr int kSide = 32;

void load_batch_file(const std::string& path, Dataset& out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DatasetError("missing dataset file: " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() % kRecordBytes != 0)
    throw DatasetError(path + ": truncated mid-record at record index " +
                       std::to_string(buf.size() / kRecordBytes));
  const std::int64_t records = static_cast<std::int64_t>(buf.size()) / kRecordBytes;
  const std::int64_t base = out.images.shape.empty() ? 0 : out.images.shape[0];
  out.images.shape = {base + records, kSide, kSide, 3};
  out.images.data.resize(static_cast<std::size_t>((base + records) * kSide * kSide * 3));
  out.labels.resize(static_cast<std::size_t>(base + records));

  for (std::int64_t r = 0; r < records; ++r) {
    const unsigned char* rec =
        reinterpret_cast<const unsigned char*>(buf.data()) + r * kRecordBytes;
    const int label = rec[0];
    if (label > 9)
      throw DatasetError(path + ": label " + std::to_string(label) + " > 9 at record index " +
                         std::to_string(r));
    out.labels[static_cast<std::size_t>(base + r)] = label;
    float* img = out.images.data.data() +
                 static_cast<std::size_t>((base + r) * kSide * kSide * 3);
    // File stores CHW (all red, all green, all blue); we store NHWC.
    for (int c = 0; c < 3; ++c) {
      const unsigned char* plane = rec + 1 + c * kSide * kSide;
      for (int p = 0; p < kSide * kSide; ++p)
        img[p * 3 + c] = (static_cast<float>(plane[p]) / 255.0f - kCifarMean[c]) / kCifarStd[c];
    }
  }
}

}  // namespace

Cifar10 load_cifar10(const std::string& data_dir) {
  Cifar10 out;
  for (int i = 1; i <= 5; ++i)
    load_batch_file(data_dir + "/data_batch_" + std::to_string(i) + ".bin", out.train);
  load_batch_file(data_dir + "/test_batch.bin", out.test);
  return out;
}

Dataset select_classes(const Dataset& d, const std::vector<int>& classes) {
  if (classes.empty()) throw std::invalid_argument("class subset must be non-empty");
  std::vector<int> remap(256, -1);
  for (std::size_t i = 0; i < classes.size(); ++i) remap[static_cast<std::size_t>(classes[i])] = static_cast<int>(i);
  const std::int64_t per = d.images.size() / std::max<std::int64_t>(d.size(), 1);
  Dataset out;
  out.images.shape = d.images.shape;
  for (std::int64_t i = 0; i < d.size(); ++i) {
    const int nl = remap[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(i)])];
    if (nl < 0) continue;
    out.labels.push_back(nl);
    const float* src = d.images.data.data() + i * per;
    out.images.data.insert(out.images.data.end(), src, src + per);
  }
  out.images.shape[0] = static_cast<std::int64_t>(out.labels.size());
  return out;
}

Dataset take(const Dataset& d, std::int64_t n) {
  if (n > d.size()) n = d.size();
  const std::int64_t per = d.images.size() / std::max<std::int64_t>(d.size(), 1);
  Dataset out;
  out.images.shape = d.images.shape;
  out.images.shape[0] = n;
  out.images.data.assign(d.images.data.begin(), d.images.data.begin() + n * per);
  out.labels.assign(d.labels.begin(), d.labels.begin() + n);
  return out;
}

Dataset drop(const Dataset& d, std::int64_t n) {
  if (n > d.size()) n = d.size();
  const std::int64_t per = d.images.size() / std::max<std::int64_t>(d.size(), 1);
  Dataset out;
  out.images.shape = d.images.shape;
  out.images.shape[0] = d.size() - n;
  out.images.data.assign(d.images.data.begin() + n * per, d.images.data.end());
  out.labels.assign(d.labels.begin() + n, d.labels.end());
  return out;
}

Dataset synth_dataset(std::uint64_t seed, int n, int classes,
                      std::array<std::int64_t, 3> shape) {
  if (n < classes) throw std::invalid_argument("synth_dataset requires n >= classes");
  if (classes < 1) throw std::invalid_argument("synth_dataset requires at least 1 class");
  Rng rng(seed);
  const std::int64_t per = shape[0] * shape[1] * shape[2];
  std::vector<std::vector<float>> means(static_cast<std::size_t>(classes));
  for (auto& m : means) {
    m.resize(static_cast<std::size_t>(per));
    for (auto& v : m) v = static_cast<float>(rng.normal(0.0, 1.0));
  }
  Dataset out;
  out.images.shape = {n, shape[0], shape[1], shape[2]};
  out.images.data.resize(static_cast<std::size_t>(n) * per);
  out.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int label = i % classes;  // balanced by construction
    out.labels[static_cast<std::size_t>(i)] = label;
    float* img = out.images.data.data() + static_cast<std::int64_t>(i) * per;
    const auto& m = means[static_cast<std::size_t>(label)];
    for (std::int64_t p = 0; p < per; ++p)
      img[p] = m[static_cast<std::size_t>(p)] + static_cast<float>(rng.normal(0.0, 1.0));
  }
  return out;
}

namespace {

void write_batch_file(const Dataset& d, std::int64_t from, std::int64_t to,
                      const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DatasetError("cannot write dataset file: " + path);
  const std::int64_t per = kSide * kSide * 3;
  std::vector<char> rec(static_cast<std::size_t>(kRecordBytes));
  for (std::int64_t i = from; i < to; ++i) {
    rec[0] = static_cast<char>(d.labels[static_cast<std::size_t>(i)]);
    const float* img = d.images.data.data() + i * per;
    for (int c = 0; c < 3; ++c) {
      for (int p = 0; p < kSide * kSide; ++p) {
        const float raw = (img[p * 3 + c] * kCifarStd[c] + kCifarMean[c]) * 255.0f;
        const int q = std::clamp(static_cast<int>(std::lround(raw)), 0, 255);
        rec[static_cast<std::size_t>(1 + c * kSide * kSide + p)] = static_cast<char>(q);
      }
    }
    f.write(rec.data(), kRecordBytes);
  }
}

}  // namespace

void write_cifar10_format(const Dataset& train, const Dataset& test, const std::string& dir) {
  if (train.images.shape.size() != 4 || train.images.shape[1] != kSide ||
      train.images.shape[2] != kSide || train.images.shape[3] != 3)
    throw std::invalid_argument("write_cifar10_format expects 32x32x3 images");
  std::filesystem::create_directories(dir);
  const std::int64_t n = train.size();
  const std::int64_t chunk = (n + 4) / 5;
  for (int i = 0; i < 5; ++i) {
    const std::int64_t from = std::min<std::int64_t>(i * chunk, n);
    const std::int64_t to = std::min<std::int64_t>((i + 1) * chunk, n);
    write_batch_file(train, from, to, dir + "/data_batch_" + std::to_string(i + 1) + ".bin");
  }
  write_batch_file(test, 0, test.size(), dir + "/test_batch.bin");
}

}  // namespace spm
