#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "spm/costmodel.hpp"
#include "spm/importance.hpp"
#include "spm/surgery.hpp"

using namespace spm;

namespace {

// conv(1->1, k=1) -> bn -> flatten -> dense(1->1) on a 1x1 input: every cost
// is computable by hand.
ModelGraph unit_graph() {
  ModelGraph g;
  g.input_shape = {1, 1, 1};
  g.num_classes = 1;
  g.layers.emplace_back(test::make_conv("c", 1, 1, 1));
  g.layers.emplace_back(test::identity_bn("b", 1));
  g.layers.emplace_back(Flatten{"f"});
  g.layers.emplace_back(test::identity_dense("d", 1));
  return g;
}

std::int64_t flops_of(const ModelGraph& g, const std::string& id, int batch) {
  for (const auto& [lid, f] : flop_breakdown(g, batch))
    if (lid == id) return f;
  FAIL("no such layer in breakdown: " << id);
  return -1;
}

}  // namespace

TEST_CASE("padded_dim") {
  CHECK(padded_dim(1, 8) == 8);
  CHECK(padded_dim(8, 8) == 8);
  CHECK(padded_dim(9, 8) == 16);
  CHECK(padded_dim(57, 8) == 64);
  CHECK(padded_dim(60, 8) == 64);
  CHECK(padded_dim(128, 128) == 128);
  CHECK(padded_dim(129, 128) == 256);
  SUBCASE("multiple 1 is the identity") {
    for (std::int64_t n : {1, 2, 7, 127, 1000}) CHECK(padded_dim(n, 1) == n);
  }
  SUBCASE("result is the smallest multiple >= n") {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
      const auto n = static_cast<std::int64_t>(1 + rng.below(500));
      const auto m = static_cast<std::int64_t>(1 + rng.below(130));
      const auto p = padded_dim(n, m);
      CHECK(p >= n);
      CHECK(p % m == 0);
      CHECK(p - n < m);
    }
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(padded_dim(0, 8), std::invalid_argument);
    CHECK_THROWS_AS(padded_dim(5, 0), std::invalid_argument);
  }
}

TEST_CASE("unit multiples make padding vanish") {
  auto g = build_preset(Preset::Tiny, 10, 1);
  LayoutConfig unpadded{1, 1, 4};
  auto b = padded_bytes(g, unpadded, 1);
  CHECK(b.weight_bytes == 4 * param_count(g));
  CHECK(b.total == b.weight_bytes + b.activation_bytes);
}

TEST_CASE("dims that round to the same multiple cost the same") {
  LayoutConfig layout{8, 1, 4};
  CHECK(padded_tensor_bytes({57}, layout) == padded_tensor_bytes({60}, layout));
  CHECK(padded_tensor_bytes({57}, layout) == 64 * 4);
  CHECK(padded_tensor_bytes({65}, layout) > padded_tensor_bytes({64}, layout));
}

TEST_CASE("second-minor padding steps in increments of the multiple") {
  LayoutConfig layout;  // defaults: minor 128, second-minor 8
  std::set<std::int64_t> distinct;
  std::int64_t prev = 0;
  for (int c = 33; c <= 64; ++c) {
    const auto bytes = padded_tensor_bytes({3, 3, c, 64}, layout);
    CHECK(bytes >= prev);  // monotone
    prev = bytes;
    distinct.insert(bytes);
  }
  CHECK(distinct.size() == 4);  // in-dims 33..64 pad to 40, 48, 56, 64
}

TEST_CASE("flop counts") {
  SUBCASE("unit graph layer by layer") {
    auto g = unit_graph();
    CHECK(flops_of(g, "c", 1) == 2);
    CHECK(flops_of(g, "b", 1) == 2);
    CHECK(flops_of(g, "f", 1) == 0);
    CHECK(flops_of(g, "d", 1) == 2);
    CHECK(flop_count(g, 1) == 6);
  }
  SUBCASE("tiny preset first conv") {
    auto g = build_preset(Preset::Tiny, 10, 1);
    // 2 * 3*3*3 taps * 32*32*16 outputs
    CHECK(flops_of(g, "conv1", 1) == 884736);
    CHECK(flops_of(g, "fc1", 1) == 2 * 1024 * 10);
    CHECK(flops_of(g, "fc1", 4) == 4 * 2 * 1024 * 10);
  }
  SUBCASE("flops scale linearly with batch") {
    auto g = build_preset(Preset::Tiny, 10, 1);
    CHECK(flop_count(g, 3) == 3 * flop_count(g, 1));
  }
  SUBCASE("empty graph costs nothing") {
    ModelGraph g;
    CHECK(flop_count(g, 1) == 0);
  }
}

TEST_CASE("estimate_step_time hand example") {
  auto g = unit_graph();
  LayoutConfig unpadded{1, 1, 4};
  auto b = padded_bytes(g, unpadded, 1);
  // weights: conv 1+1, bn 4, dense 1+1 -> 8 elements
  CHECK(b.weight_bytes == 32);
  // activations: one element after each of the four layers
  CHECK(b.activation_bytes == 16);
  DeviceProfile p;
  p.flops_per_second = 10.0;
  p.bytes_per_second = 100.0;
  p.fixed_overhead_seconds = 0.5;
  // 0.5 + 3*6/10 + 48/100
  CHECK(estimate_step_time(g, unpadded, p, 1) == doctest::Approx(2.78));
}

TEST_CASE("estimate scales inversely with compute throughput") {
  auto g = build_preset(Preset::Tiny, 10, 1);
  LayoutConfig layout;
  DeviceProfile slow, fast, instant;
  slow.flops_per_second = 1e9;
  fast.flops_per_second = 2e9;
  instant.flops_per_second = 1e30;
  slow.bytes_per_second = fast.bytes_per_second = instant.bytes_per_second = 1e9;
  slow.fixed_overhead_seconds = fast.fixed_overhead_seconds = instant.fixed_overhead_seconds = 1e-3;
  const double base = estimate_step_time(g, layout, instant, 8);  // overhead + bytes only
  const double t1 = estimate_step_time(g, layout, slow, 8);
  const double t2 = estimate_step_time(g, layout, fast, 8);
  CHECK(t1 - base == doctest::Approx(2.0 * (t2 - base)).epsilon(1e-9));
  CHECK(t1 > t2);
}

TEST_CASE("pruning shrinks every cost") {
  auto g = build_preset(Preset::Tiny, 10, 4);
  auto pruned = apply_plan(g, make_plan(score_l1(g), 0.5, Scope::Global), WeightPolicy::reload());
  LayoutConfig layout;
  DeviceProfile profile;  // defaults
  CHECK(param_count(pruned) < param_count(g));
  CHECK(padded_bytes(pruned, layout, 8).total <= padded_bytes(g, layout, 8).total);
  LayoutConfig unpadded{1, 1, 4};
  CHECK(padded_bytes(pruned, unpadded, 8).total < padded_bytes(g, unpadded, 8).total);
  CHECK(estimate_step_time(pruned, unpadded, profile, 8) <
        estimate_step_time(g, unpadded, profile, 8));
}

TEST_CASE("weight bytes ignore batch, activation bytes grow with it") {
  auto g = build_preset(Preset::Tiny, 10, 1);
  LayoutConfig layout;
  auto b1 = padded_bytes(g, layout, 1);
  auto b8 = padded_bytes(g, layout, 8);
  CHECK(b1.weight_bytes == b8.weight_bytes);
  CHECK(b8.activation_bytes > b1.activation_bytes);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(validate_layout(LayoutConfig{0, 8, 4}), std::invalid_argument);
  CHECK_THROWS_AS(validate_layout(LayoutConfig{128, 8, 0}), std::invalid_argument);
  DeviceProfile p;
  p.flops_per_second = 0.0;
  CHECK_THROWS_AS(validate_profile(p), std::invalid_argument);
  p = {};
  p.fixed_overhead_seconds = -1.0;
  CHECK_THROWS_AS(validate_profile(p), std::invalid_argument);
}
