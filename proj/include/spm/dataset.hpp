#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spm/engine.hpp"

namespace spm {

// Per-channel normalization constants for CIFAR-10 (training-set statistics,
// RGB order). Applied as (pixel/255 - mean) / std.
inline constexpr std::array<float, 3> kCifarMean = {0.4914f, 0.4822f, 0.4465f};
inline constexpr std::array<float, 3> kCifarStd = {0.2470f, 0.2435f, 0.2616f};

struct Cifar10 {
  Dataset train;
  Dataset test;
};

// Reads the published binary format: data_batch_1..5.bin + test_batch.bin,
// 10000 records each of 3073 bytes (label byte + 3x1024 CHW pixels).
// Output is normalized NHWC float32.
Cifar10 load_cifar10(const std::string& data_dir);

// Keeps only the listed classes, relabeling them 0..k-1 in list order.
Dataset select_classes(const Dataset& d, const std::vector<int>& classes);

// Keeps the first n samples.
Dataset take(const Dataset& d, std::int64_t n);

// Removes the first n samples.
Dataset drop(const Dataset& d, std::int64_t n);

// Seeded Gaussian class-blob images with balanced labels: class c has a
// fixed random mean image, samples add unit pixel noise.
Dataset synth_dataset(std::uint64_t seed, int n, int classes,
                      std::array<std::int64_t, 3> shape);

// Writes a dataset out as CIFAR-10 binary batch files (denormalizing with
// the constants above and clamping to [0,255]). Test aid and offline-use
// stand-in when the real dataset is not present.
void write_cifar10_format(const Dataset& train, const Dataset& test, const std::string& dir);

}  // namespace spm
