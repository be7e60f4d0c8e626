#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "helpers.hpp"
#include "spm/dataset.hpp"
#include "spm/errors.hpp"

using namespace spm;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

void append_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::app);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// A minimal but well-formed layout: five train batches + one test batch.
void write_valid_corpus(const TempDir& dir, int records_per_file) {
  std::vector<unsigned char> rec(3073, 0);
  for (int i = 1; i <= 6; ++i) {
    const fs::path p = dir.path / (i <= 5 ? "data_batch_" + std::to_string(i) + ".bin"
                                          : std::string("test_batch.bin"));
    for (int r = 0; r < records_per_file; ++r) {
      rec[0] = static_cast<unsigned char>(r % 10);
      append_bytes(p, rec);
    }
  }
}

}  // namespace

TEST_CASE("synth_dataset") {
  SUBCASE("labels are balanced and images deterministic per seed") {
    auto a = synth_dataset(5, 30, 3, {4, 4, 2});
    auto b = synth_dataset(5, 30, 3, {4, 4, 2});
    auto c = synth_dataset(6, 30, 3, {4, 4, 2});
    CHECK(a.images.data == b.images.data);
    CHECK(a.labels == b.labels);
    CHECK(a.images.data != c.images.data);
    std::map<int, int> counts;
    for (int l : a.labels) ++counts[l];
    REQUIRE(counts.size() == 3);
    for (const auto& [l, n] : counts) CHECK(n == 10);
    CHECK(a.images.shape == std::vector<std::int64_t>{30, 4, 4, 2});
    CHECK(a.images.all_finite());
  }
  SUBCASE("same-class samples share a mean image") {
    auto d = synth_dataset(1, 200, 2, {2, 2, 1});
    // average the per-class samples; the two class means should be far apart
    std::array<double, 2> m0{}, m1{};
    std::array<int, 2> n{};
    for (int i = 0; i < 200; ++i) {
      const int l = d.labels[static_cast<std::size_t>(i)];
      (l == 0 ? m0 : m1)[0] += d.images.data[static_cast<std::size_t>(i) * 4];
      ++n[static_cast<std::size_t>(l)];
    }
    const double sep = std::abs(m0[0] / n[0] - m1[0] / n[1]);
    // noise shrinks as 1/sqrt(100); the means differ by an O(1) gaussian draw
    CHECK(sep > 0.05);
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(synth_dataset(1, 2, 3, {2, 2, 1}), std::invalid_argument);
    CHECK_THROWS_AS(synth_dataset(1, 5, 0, {2, 2, 1}), std::invalid_argument);
    CHECK_NOTHROW(synth_dataset(1, 5, 1, {2, 2, 1}));
  }
}

TEST_CASE("select_classes keeps and relabels in list order") {
  auto d = synth_dataset(2, 40, 4, {2, 2, 1});
  auto sub = select_classes(d, {3, 1});
  CHECK(sub.size() == 20);
  for (std::int64_t i = 0; i < sub.size(); ++i) {
    const int l = sub.labels[static_cast<std::size_t>(i)];
    CHECK((l == 0 || l == 1));  // 3 -> 0, 1 -> 1
  }
  // image payloads follow their samples
  const float* first_sub = sub.images.data.data();
  // first retained sample is the first with label 3 or 1, i.e. original index 1
  const float* orig = d.images.data.data() + 1 * 4;
  CHECK(std::equal(first_sub, first_sub + 4, orig));
  CHECK_THROWS_AS(select_classes(d, {}), std::invalid_argument);
}

TEST_CASE("take keeps a prefix") {
  auto d = synth_dataset(2, 10, 2, {2, 2, 1});
  auto t = take(d, 4);
  CHECK(t.size() == 4);
  CHECK(t.labels == std::vector<int>(d.labels.begin(), d.labels.begin() + 4));
  CHECK(std::equal(t.images.data.begin(), t.images.data.end(), d.images.data.begin()));
  CHECK(take(d, 99).size() == 10);
}

TEST_CASE("drop removes a prefix and complements take") {
  auto d = synth_dataset(2, 10, 2, {2, 2, 1});
  auto rest = drop(d, 4);
  CHECK(rest.size() == 6);
  CHECK(rest.labels == std::vector<int>(d.labels.begin() + 4, d.labels.end()));
  CHECK(std::equal(rest.images.data.begin(), rest.images.data.end(),
                   d.images.data.begin() + 4 * 4));
  CHECK(drop(d, 99).size() == 0);
  auto head = take(d, 4);
  CHECK(head.images.data.size() + rest.images.data.size() == d.images.data.size());
}

TEST_CASE("cifar round-trips through the binary format") {
  TempDir dir("spm_cifar_roundtrip");
  auto train = synth_dataset(7, 50, 10, {32, 32, 3});
  auto test = synth_dataset(8, 20, 10, {32, 32, 3});
  write_cifar10_format(train, test, dir.str());
  for (int i = 1; i <= 5; ++i)
    CHECK(fs::exists(dir.path / ("data_batch_" + std::to_string(i) + ".bin")));

  auto loaded = load_cifar10(dir.str());
  CHECK(loaded.train.size() == 50);
  CHECK(loaded.test.size() == 20);
  CHECK(loaded.train.labels == train.labels);
  CHECK(loaded.test.labels == test.labels);
  // quantization to 8 bits costs at most half a pixel step per channel
  for (std::size_t i = 0; i < train.images.data.size(); ++i) {
    const int c = static_cast<int>(i % 3);
    const float tol = 0.51f / 255.0f / kCifarStd[static_cast<std::size_t>(c)];
    const float orig = std::clamp(train.images.data[i],
                                  (0.0f / 255.0f - kCifarMean[c]) / kCifarStd[c],
                                  (255.0f / 255.0f - kCifarMean[c]) / kCifarStd[c]);
    CHECK(std::abs(loaded.train.images.data[i] - orig) <= tol);
  }
}

TEST_CASE("loader normalizes with the published constants") {
  TempDir dir("spm_cifar_norm");
  // one record per file, every pixel 128, label 7
  std::vector<unsigned char> rec(3073, 128);
  rec[0] = 7;
  for (int i = 1; i <= 5; ++i) append_bytes(dir.path / ("data_batch_" + std::to_string(i) + ".bin"), rec);
  append_bytes(dir.path / "test_batch.bin", rec);
  auto data = load_cifar10(dir.str());
  REQUIRE(data.train.size() == 5);
  CHECK(data.train.labels[0] == 7);
  for (int c = 0; c < 3; ++c) {
    const float want = (128.0f / 255.0f - kCifarMean[static_cast<std::size_t>(c)]) /
                       kCifarStd[static_cast<std::size_t>(c)];
    CHECK(data.train.images.data[static_cast<std::size_t>(c)] == doctest::Approx(want));
    // NHWC: channel varies fastest
    CHECK(data.train.images.data[3 + static_cast<std::size_t>(c)] == doctest::Approx(want));
  }
}

TEST_CASE("loader failure modes name the file and record") {
  TempDir dir("spm_cifar_bad");
  SUBCASE("missing file") {
    try {
      load_cifar10(dir.str());
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      CHECK(std::string(e.what()).find("data_batch_1.bin") != std::string::npos);
    }
  }
  SUBCASE("truncated record") {
    write_valid_corpus(dir, 2);
    append_bytes(dir.path / "data_batch_3.bin", std::vector<unsigned char>(100, 0));
    try {
      load_cifar10(dir.str());
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("data_batch_3.bin") != std::string::npos);
      CHECK(msg.find("record index 2") != std::string::npos);
    }
  }
  SUBCASE("label out of range") {
    write_valid_corpus(dir, 2);
    std::vector<unsigned char> rec(3073, 0);
    rec[0] = 11;
    append_bytes(dir.path / "test_batch.bin", rec);
    try {
      load_cifar10(dir.str());
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("test_batch.bin") != std::string::npos);
      CHECK(msg.find("record index 2") != std::string::npos);
      CHECK(msg.find("11") != std::string::npos);
    }
  }
}
