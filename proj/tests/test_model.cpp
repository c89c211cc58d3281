#include <doctest.h>

#include "smarc/gradcheck.hpp"
#include "smarc/model.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <string>

using namespace smarc;

namespace {

MaskPair<float> random_input(const ArchConfig& cfg, Rng& rng, double p_valid = 1.0) {
  const Index s = cfg.input_size;
  auto img = test_util::random_tensor<float>({1, s, s, 3}, rng, 0.f, 1.f);
  auto m = Tensor<float>::uninitialized({1, s, s, 1});
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(p_valid) ? 1.f : 0.f;
  return {img, m};
}

// Spreadsheet-style independent tally of the parameter count, written from
// the architecture description alone.
Index hand_tally(const ArchConfig& c) {
  auto se = [&](Index ch) {
    const Index r = std::max<Index>(4, ch / c.se_ratio);
    return ch * r + r + r * ch + ch;
  };
  auto block = [&](Index ci, Index co) {
    return 9 * ci * co + co + 9 * co * co + co + se(co);
  };
  const Index b = c.base_channels;
  Index total = 0;
  Index cin = 3;
  for (Index co : {b, b * 2, b * 4, b * 8}) {
    total += block(cin, co);
    cin = co;
  }
  total += block(b * 8, c.bottleneck1);
  total += block(c.bottleneck1, c.bottleneck2);
  Index prev = c.bottleneck2;
  const Index skips[4] = {b * 8, b * 4, b * 2, b};
  for (int i = 0; i < 4; ++i) {
    const Index f = skips[i];
    total += 9 * f * prev + f;       // transposed conv
    total += block(f + f, f);        // skip concat doubles the input width
    prev = f;
  }
  total += 1 * 1 * b * 3 + 3;  // rgb head
  Index hin = b * 4 + b * 8 + c.bottleneck2;
  for (Index h : c.head_hidden) {
    total += hin * h + h;
    hin = h;
  }
  total += hin * c.num_classes + c.num_classes;
  return total;
}

}  // namespace

TEST_CASE("desk config shape arithmetic verified by a forward pass") {
  auto cfg = ArchConfig::desk(32, 4);
  auto model = build_model<float>(cfg, 42);
  Rng rng(1);
  auto in = random_input(cfg, rng);

  auto e = encode(model, in);
  CHECK(e.skips[0].features.shape() == Shape{1, 32, 32, 4});
  CHECK(e.skips[1].features.shape() == Shape{1, 16, 16, 8});
  CHECK(e.skips[2].features.shape() == Shape{1, 8, 8, 16});
  CHECK(e.skips[3].features.shape() == Shape{1, 4, 4, 32});
  CHECK(e.deepest.features.shape() == Shape{1, 2, 2, 32});
  CHECK(e.deepest.mask.shape() == Shape{1, 2, 2, 1});

  auto b = bottleneck(model, e.deepest);
  CHECK(b.features.shape() == Shape{1, 2, 2, cfg.bottleneck2});
  CHECK(b.mask.shape() == Shape{1, 2, 2, 1});

  auto y = decode(model, b, e.skips);
  CHECK(y.features.shape() == Shape{1, 32, 32, 4});
  CHECK(y.mask.shape() == Shape{1, 32, 32, 1});

  auto out = forward(model, in);
  CHECK(out.reconstruction.shape() == Shape{1, 32, 32, 3});
  CHECK(out.class_logits.shape() == Shape{1, 4});
  CHECK(out.final_mask.shape() == Shape{1, 32, 32, 1});
}

TEST_CASE("all-ones input mask gives all-ones skip and final masks") {
  auto cfg = ArchConfig::desk(32, 4);
  auto model = build_model<float>(cfg, 7);
  Rng rng(2);
  auto in = random_input(cfg, rng, 1.0);
  auto e = encode(model, in);
  for (const auto& s : e.skips)
    for (Index i = 0; i < s.mask.size(); ++i) CHECK(s.mask[i] == 1.f);
  auto out = forward(model, in);
  for (Index i = 0; i < out.final_mask.size(); ++i) CHECK(out.final_mask[i] == 1.f);
}

TEST_CASE("encoder mask growth matches two 3x3 dilations per block") {
  // A centered 15x15 valid patch must grow to 19x19 after enc1 (two 3x3
  // mask updates add 2 px per side).
  auto cfg = ArchConfig::desk(64, 4);
  auto model = build_model<float>(cfg, 3);
  Rng rng(4);
  auto img = test_util::random_tensor<float>({1, 64, 64, 3}, rng, 0.f, 1.f);
  auto m = Tensor<float>::zeros({1, 64, 64, 1});
  for (Index y = 24; y < 39; ++y)
    for (Index x = 24; x < 39; ++x) m.data()[y * 64 + x] = 1.f;

  auto e = encode(model, MaskPair<float>{img, m});
  Index ones = 0;
  for (Index i = 0; i < e.skips[0].mask.size(); ++i) ones += e.skips[0].mask[i] == 1.f;
  CHECK(ones == 19 * 19);
  for (Index y = 0; y < 64; ++y)
    for (Index x = 0; x < 64; ++x) {
      const bool inside = y >= 22 && y <= 40 && x >= 22 && x <= 40;
      CHECK(e.skips[0].mask[y * 64 + x] == (inside ? 1.f : 0.f));
    }
}

TEST_CASE("class probabilities are a distribution and f_cls width is wired") {
  auto cfg = ArchConfig::desk(32, 8);
  auto model = build_model<float>(cfg, 9);
  // f_cls = GAP(s3) + GAP(s4) + GAP(b) widths
  CHECK(model.head_hidden[0].weight.dim(0) == 8 * 4 + 8 * 8 + cfg.bottleneck2);

  Rng rng(10);
  auto out = forward(model, random_input(cfg, rng));
  float sum = 0.f;
  for (Index k = 0; k < 4; ++k) sum += out.class_probs[k];
  CHECK(sum == doctest::Approx(1.f).epsilon(1e-6));
}

TEST_CASE("eval-mode forwards are bitwise reproducible (dropout inert)") {
  auto cfg = ArchConfig::desk(32, 4);
  auto model = build_model<float>(cfg, 11);
  Rng rng(12);
  auto in = random_input(cfg, rng);
  auto a = forward(model, in, false);
  auto b = forward(model, in, false);
  CHECK(test_util::bitwise_equal(a.reconstruction, b.reconstruction));
  CHECK(test_util::bitwise_equal(a.class_logits, b.class_logits));

  Rng d1(99), d2(99);
  auto t1 = forward(model, in, true, &d1);
  auto t2 = forward(model, in, true, &d2);
  CHECK(test_util::bitwise_equal(t1.class_logits, t2.class_logits));
}

TEST_CASE("perturbing invisible pixels changes nothing end to end") {
  auto cfg = ArchConfig::desk(32, 4);
  auto model = build_model<float>(cfg, 13);
  Rng rng(14);
  auto in = random_input(cfg, rng, 0.3);
  auto base = forward(model, in);

  auto poked = in.features.clone();
  for (Index p = 0; p < in.mask.size(); ++p)
    if (in.mask[p] == 0.f)
      for (Index c = 0; c < 3; ++c)
        poked.data()[p * 3 + c] = static_cast<float>(rng.uniform(-5.0, 5.0));
  auto out = forward(model, MaskPair<float>{poked, in.mask});
  CHECK(test_util::bitwise_equal(base.reconstruction, out.reconstruction));
  CHECK(test_util::bitwise_equal(base.class_logits, out.class_logits));
  CHECK(test_util::bitwise_equal(base.final_mask, out.final_mask));
}

TEST_CASE("permuting class-head output units permutes probabilities") {
  auto cfg = ArchConfig::desk(32, 4);
  auto model = build_model<float>(cfg, 15);
  Rng rng(16);
  auto in = random_input(cfg, rng);
  auto before = forward(model, in);

  const std::vector<Index> perm = {2, 0, 3, 1};
  auto w = model.head_out.weight.clone();
  auto b = model.head_out.bias.clone();
  const Index hin = w.dim(0);
  for (Index k = 0; k < 4; ++k) {
    for (Index r = 0; r < hin; ++r)
      model.head_out.weight.data()[r * 4 + perm[k]] = w[r * 4 + k];
    model.head_out.bias.data()[perm[k]] = b[k];
  }
  auto after = forward(model, in);
  for (Index k = 0; k < 4; ++k)
    CHECK(after.class_probs[perm[k]] == doctest::Approx(before.class_probs[k]).epsilon(1e-6));
}

TEST_CASE("param_count counts every element") {
  Rng rng(17);
  auto lone = DenseLayer<float>::init(10, 5, rng);
  CHECK(lone.weight.size() + lone.bias.size() == 55);

  for (auto cfg : {ArchConfig::desk(32, 4), ArchConfig::desk(64, 16)}) {
    auto model = build_model<float>(cfg, 18);
    CHECK(param_count(model) == hand_tally(cfg));
  }
}

TEST_CASE("param_throughput follows the caption formula") {
  CHECK(param_throughput(145'070'000, 0.0130) == doctest::Approx(11159.0).epsilon(1e-3));
  CHECK(param_throughput(1'000'000, 0.5) == doctest::Approx(2.0));
}

TEST_CASE("parameter names are unique and follow the documented paths") {
  auto model = build_model<float>(ArchConfig::desk(32, 4), 19);
  CHECK(model.find_parameter("enc2.pconv1.weight") != nullptr);
  CHECK(model.find_parameter("dec4.up.weight") != nullptr);
  CHECK(model.find_parameter("rgb_head.weight") != nullptr);
  CHECK(model.find_parameter("cls_head.out.bias") != nullptr);
  CHECK(model.find_parameter("nonexistent") == nullptr);

  const auto* k = model.find_parameter("enc1.pconv1.weight");
  REQUIRE(k != nullptr);
  CHECK(k->weight_decay_eligible);
  const auto* b = model.find_parameter("enc1.pconv1.bias");
  REQUIRE(b != nullptr);
  CHECK_FALSE(b->weight_decay_eligible);
}

TEST_CASE("invalid configs are rejected with every field named at once") {
  ArchConfig cfg;
  cfg.input_size = 30;     // not divisible by 16
  cfg.base_channels = 2;   // too small
  cfg.num_classes = 1;     // too small
  cfg.dropout = 1.5;       // out of range
  try {
    build_model<float>(cfg, 0);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("input_size") != std::string::npos);
    CHECK(msg.find("base_channels") != std::string::npos);
    CHECK(msg.find("num_classes") != std::string::npos);
    CHECK(msg.find("dropout") != std::string::npos);
  }
}

TEST_CASE("wrong input size is rejected") {
  auto model = build_model<float>(ArchConfig::desk(32, 4), 20);
  auto img = Tensor<float>::zeros({1, 16, 16, 3});
  auto m = Tensor<float>::ones({1, 16, 16, 1});
  CHECK_THROWS_AS(encode(model, MaskPair<float>{img, m}), std::invalid_argument);
}

TEST_CASE("same seed builds bitwise-identical models") {
  auto a = build_model<float>(ArchConfig::desk(32, 4), 123);
  auto b = build_model<float>(ArchConfig::desk(32, 4), 123);
  REQUIRE(a.parameters.size() == b.parameters.size());
  for (std::size_t i = 0; i < a.parameters.size(); ++i)
    CHECK(test_util::bitwise_equal(a.parameters[i].tensor, b.parameters[i].tensor));
}
