#include <cmath>

#include "doctest.h"
#include "patchmix/augment.hpp"

using namespace patchmix;

namespace {

TensorF32 rand_image(int c, int h, int w, Rng& rng) {
  TensorF32 t({(uint32_t)c, (uint32_t)h, (uint32_t)w});
  for (size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.gaussian());
  return t;
}

}  // namespace

TEST_CASE("box size follows W*sqrt(1-lambda)") {
  Rng rng(1);
  MixBox box = box_from_lambda(84, 84, 0.75, rng);
  CHECK(box.w_hat == doctest::Approx(42.0));
  CHECK(box.h_hat == doctest::Approx(42.0));
  CHECK(box.w2 - box.w1 + 1 == doctest::Approx(42).epsilon(1));
}

TEST_CASE("degenerate lambdas give the empty box and the full image") {
  Rng rng(2);
  TensorF32 q = rand_image(1, 8, 8, rng);
  TensorF32 g = rand_image(1, 8, 8, rng);

  auto [m1, s1] = patchmix_with_lambda(q, g, 0, 1, 4, 4, 1.0, rng);
  CHECK(s1.box.empty());
  CHECK(sum(s1.mask.data(), s1.mask.numel()) == 0.0);
  for (size_t i = 0; i < q.numel(); ++i) CHECK(m1[i] == q[i]);
  for (int v : s1.label_map) CHECK(v == 0);

  auto [m0, s0] = patchmix_with_lambda(q, g, 0, 1, 4, 4, 0.0, rng);
  CHECK(s0.box.w1 == 0);
  CHECK(s0.box.w2 == 7);
  CHECK(s0.box.h1 == 0);
  CHECK(s0.box.h2 == 7);
  for (size_t i = 0; i < q.numel(); ++i) CHECK(m0[i] == g[i]);
  for (int v : s0.label_map) CHECK(v == 1);
}

TEST_CASE("label map scaling matches the 8->4 worked example") {
  MixBox box;
  box.w1 = 4;
  box.w2 = 7;
  box.h1 = 4;
  box.h2 = 7;
  std::vector<uint8_t> cells = cell_mask(box, 8, 8, 4, 4);
  // scaled box [2, 4) x [2, 4): the bottom-right 2x2 block of cells
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      CHECK(cells[r * 4 + c] == ((r >= 2 && c >= 2) ? 1 : 0));
}

TEST_CASE("mask equals box membership and mixed pixels come from the right image") {
  Rng rng(3);
  TensorF32 q = rand_image(2, 12, 16, rng);
  TensorF32 g = rand_image(2, 12, 16, rng);
  auto [mixed, spec] = patchmix(q, g, 0, 1, 3, 4, rng);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x) {
      bool inside = !spec.box.empty() && x >= spec.box.w1 && x <= spec.box.w2 &&
                    y >= spec.box.h1 && y <= spec.box.h2;
      CHECK(spec.mask[y * 16 + x] == (inside ? 1.0f : 0.0f));
      for (int c = 0; c < 2; ++c) {
        size_t i = (static_cast<size_t>(c) * 12 + y) * 16 + x;
        CHECK(mixed[i] == (inside ? g[i] : q[i]));
      }
    }
}

TEST_CASE("mask area identity over many draws") {
  Rng rng(4);
  const int W = 84, H = 84;
  for (int t = 0; t < 1000; ++t) {
    auto [lambda, box] = sample_box(W, H, rng);
    double area = box.empty() ? 0.0
                              : static_cast<double>(box.w2 - box.w1 + 1) *
                                    (box.h2 - box.h1 + 1);
    CHECK(std::fabs(area - (1.0 - lambda) * W * H) <= W + H);
    CHECK(std::fabs(box.w_hat * box.h_hat - (1.0 - lambda) * W * H) < 1e-6);
    if (!box.empty()) {
      CHECK(box.w1 >= 0);
      CHECK(box.w2 < W);
      CHECK(box.h1 >= 0);
      CHECK(box.h2 < H);
    }
  }
}

TEST_CASE("label-map fraction tracks the pixel mask fraction") {
  Rng rng(5);
  TensorF32 q = rand_image(1, 84, 84, rng);
  TensorF32 g = rand_image(1, 84, 84, rng);
  const int gw = 11, gh = 11;
  for (int t = 0; t < 1000; ++t) {
    auto [mixed, spec] = patchmix(q, g, 0, 1, gh, gw, rng);
    double mask_frac = sum(spec.mask.data(), spec.mask.numel()) / (84.0 * 84.0);
    int cells = 0;
    for (int v : spec.label_map) cells += (v == 1);
    double cell_frac = cells / static_cast<double>(gw * gh);
    CHECK(std::fabs(cell_frac - mask_frac) <=
          static_cast<double>(gw + gh) / (gw * gh));
  }
}

TEST_CASE("mixing an image with itself is the identity") {
  Rng rng(6);
  TensorF32 q = rand_image(1, 16, 16, rng);
  for (int t = 0; t < 20; ++t) {
    auto [mixed, spec] = patchmix(q, q, 3, 3, 4, 4, rng);
    for (size_t i = 0; i < q.numel(); ++i) CHECK(mixed[i] == q[i]);
    for (int v : spec.label_map) CHECK(v == 3);
  }
}

TEST_CASE("the complementary image holds the counterpart pixels") {
  Rng rng(7);
  TensorF32 q = rand_image(1, 10, 10, rng);
  TensorF32 g = rand_image(1, 10, 10, rng);
  auto [mixed, spec] = patchmix(q, g, 0, 1, 5, 5, rng);
  TensorF32 comp = mix_complement(q, g, spec);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) {
      bool inside = spec.mask[y * 10 + x] == 1.0f;
      size_t i = static_cast<size_t>(y) * 10 + x;
      CHECK(comp[i] == (inside ? q[i] : g[i]));
    }
}

TEST_CASE("cutmix emits an affine soft label consistent with lambda") {
  Rng rng(8);
  TensorF32 q = rand_image(1, 8, 8, rng);
  TensorF32 g = rand_image(1, 8, 8, rng);
  for (int t = 0; t < 1000; ++t) {
    auto [mixed, soft] = cutmix(q, g, 1, 3, 5, rng);
    double total = 0.0;
    for (double v : soft) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(soft[0] == 0.0);
    CHECK(soft[1] + soft[3] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("mixup blends pixels with the soft-label weight") {
  Rng rng(9);
  TensorF32 q = rand_image(1, 8, 8, rng);
  TensorF32 g = rand_image(1, 8, 8, rng);
  for (int t = 0; t < 50; ++t) {
    auto [mixed, soft] = mixup(q, g, 0, 2, 4, rng);
    double lambda = soft[0];
    for (size_t i = 0; i < q.numel(); ++i)
      CHECK(mixed[i] ==
            doctest::Approx(lambda * q[i] + (1.0 - lambda) * g[i]).epsilon(1e-5));
  }
}

TEST_CASE("shape mismatches are argument errors") {
  Rng rng(10);
  TensorF32 q = rand_image(1, 8, 8, rng);
  TensorF32 g = rand_image(1, 8, 10, rng);
  CHECK_THROWS_AS(patchmix(q, g, 0, 1, 4, 4, rng), ArgumentError);
  CHECK_THROWS_AS(mixup(q, g, 0, 1, 4, rng), ArgumentError);
}
