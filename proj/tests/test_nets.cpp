#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "patchmix/nets.hpp"

using namespace patchmix;

namespace {

NetShape small_shape() {
  NetShape s;
  s.channels = 1;
  s.height = 8;
  s.width = 8;
  s.grid_h = 4;
  s.grid_w = 4;
  s.d_hidden = 5;
  s.feat_dim = 3;
  s.n_base = 2;
  return s;
}

TensorF32 rand_image(const NetShape& s, Rng& rng) {
  TensorF32 t({(uint32_t)s.channels, (uint32_t)s.height, (uint32_t)s.width});
  for (size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("zero image with zero biases maps to a zero feature map") {
  Rng rng(11);
  Model m = init_model(small_shape(), rng);
  std::fill(m.backbone.b1.vec().begin(), m.backbone.b1.vec().end(), 0.0f);
  std::fill(m.backbone.b2.vec().begin(), m.backbone.b2.vec().end(), 0.0f);
  FeatureMap f = forward_backbone(m, TensorF32({1, 8, 8}, 0.0f));
  for (double v : f.data) CHECK(v == 0.0);
}

TEST_CASE("weight sharing: permuting two patches permutes the two columns") {
  Rng rng(12);
  NetShape s = small_shape();
  Model m = init_model(s, rng);
  TensorF32 img = rand_image(s, rng);
  // swap patch (0,0) with patch (2,3)
  TensorF32 swapped = img;
  for (int py = 0; py < 2; ++py)
    for (int px = 0; px < 2; ++px) {
      size_t a = static_cast<size_t>(py) * 8 + px;
      size_t b = static_cast<size_t>(4 + py) * 8 + 6 + px;
      std::swap(swapped[a], swapped[b]);
    }
  FeatureMap f1 = forward_backbone(m, img);
  FeatureMap f2 = forward_backbone(m, swapped);
  int cell_a = 0, cell_b = 2 * 4 + 3;
  for (int i = 0; i < 3; ++i) {
    CHECK(f2.cell(cell_a)[i] == f1.cell(cell_b)[i]);
    CHECK(f2.cell(cell_b)[i] == f1.cell(cell_a)[i]);
  }
  for (int cell = 0; cell < 16; ++cell) {
    if (cell == cell_a || cell == cell_b) continue;
    for (int i = 0; i < 3; ++i) CHECK(f2.cell(cell)[i] == f1.cell(cell)[i]);
  }
}

TEST_CASE("fixed seed params and input give the frozen golden features") {
  NetShape s = small_shape();
  Rng rng(42);
  Model m = init_model(s, rng);
  TensorF32 img({1, 8, 8});
  for (size_t i = 0; i < img.numel(); ++i)
    img[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  FeatureMap f = forward_backbone(m, img);
  const double golden[6] = {0.13649036736666981,  0.11507609760440915,
                            -0.70686413955063609, -0.8298027017666626,
                            -0.53118112120207295, -0.17221792445671169};
  for (int i = 0; i < 6; ++i)
    CHECK(f.data[i] == doctest::Approx(golden[i]).epsilon(0));
  CHECK(f.data.back() == doctest::Approx(0.5861534535717694).epsilon(0));
}

TEST_CASE("indivisible image dims are rejected") {
  NetShape s = small_shape();
  s.grid_h = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  Rng rng(13);
  Model m = init_model(small_shape(), rng);
  CHECK_THROWS_AS(forward_backbone(m, TensorF32({1, 9, 8}, 0.f)), ArgumentError);
}

TEST_CASE("backward without retained activations is a state error") {
  Rng rng(14);
  Model m = init_model(small_shape(), rng);
  GradBuffer grads(m);
  BackboneCache empty;
  FeatureMap dfeat(3, 4, 4);
  CHECK_THROWS_AS(backward_backbone(m, empty, dfeat, grads), StateError);
  DecoderCache dempty;
  std::vector<double> dimg(64, 0.0);
  CHECK_THROWS_AS(backward_decoder(m, dempty, dimg, grads, dfeat), StateError);
}

TEST_CASE("global classifier backward matches the linear-regression closed form") {
  // squared loss on per-cell logits: dW = sum_cells 2*err*x^T
  Rng rng(15);
  NetShape s = small_shape();
  Model m = init_model(s, rng);
  TensorF32 img = rand_image(s, rng);
  FeatureMap f = forward_backbone(m, img);
  std::vector<double> logits = forward_gc(m, f);
  std::vector<double> target(logits.size());
  for (double& v : target) v = rng.gaussian();
  std::vector<double> dlogits(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    dlogits[i] = 2.0 * (logits[i] - target[i]);
  GradBuffer grads(m);
  FeatureMap dfeat(s.feat_dim, s.grid_h, s.grid_w);
  backward_gc(m, f, dlogits, grads, dfeat);
  for (int r = 0; r < s.n_base; ++r)
    for (int c = 0; c < s.feat_dim; ++c) {
      double expect = 0.0;
      for (int cell = 0; cell < f.cells(); ++cell)
        expect += 2.0 *
                  (logits[static_cast<size_t>(cell) * s.n_base + r] -
                   target[static_cast<size_t>(cell) * s.n_base + r]) *
                  f.cell(cell)[c];
      CHECK(grads.g[4][static_cast<size_t>(r) * s.feat_dim + c] ==
            doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("decoder mirrors the backbone shape") {
  Rng rng(16);
  NetShape s = small_shape();
  Model m = init_model(s, rng);
  TensorF32 img = rand_image(s, rng);
  FeatureMap f = forward_backbone(m, img);
  std::vector<double> recon = forward_decoder(m, f);
  CHECK(recon.size() == img.numel());
}

TEST_CASE("sgd identities: no-op update, cosine endpoints, descent on a bowl") {
  Rng rng(17);
  Model m = init_model(small_shape(), rng);
  Model before = m;
  GradBuffer zero(m);
  SgdState state(m);
  sgd_step(m, zero, state, 0.1, 0.0, 0.9);
  auto pa = param_list(m);
  auto pb = param_list(before);
  for (size_t i = 0; i < pa.size(); ++i)
    for (size_t j = 0; j < pa[i]->numel(); ++j)
      CHECK((*pa[i])[j] == (*pb[i])[j]);

  CHECK(cosine_lr(0.15, 0, 100) == doctest::Approx(0.15));
  CHECK(cosine_lr(0.15, 100, 100) == doctest::Approx(0.0));
  CHECK(cosine_lr(0.15, 50, 100) == doctest::Approx(0.075));

  // one step on f(x) = |x|^2 decreases f
  Model bowl = init_model(small_shape(), rng);
  GradBuffer g(bowl);
  auto params = param_list(bowl);
  double f0 = 0.0;
  for (size_t i = 0; i < params.size(); ++i)
    for (size_t j = 0; j < params[i]->numel(); ++j) {
      double x = (*params[i])[j];
      f0 += x * x;
      g.g[i][j] = 2.0 * x;
    }
  SgdState st(bowl);
  sgd_step(bowl, g, st, 0.01, 0.0, 0.0);
  double f1 = 0.0;
  for (size_t i = 0; i < params.size(); ++i)
    for (size_t j = 0; j < params[i]->numel(); ++j)
      f1 += static_cast<double>((*params[i])[j]) * (*params[i])[j];
  CHECK(f1 < f0);
}

TEST_CASE("checkpoints round-trip byte-exactly and reject junk") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "ckpt_test";
  fs::create_directories(dir);
  Rng rng(18);
  Model m = init_model(small_shape(), rng);
  std::string p1 = (dir / "a.ckpt").string();
  std::string p2 = (dir / "b.ckpt").string();
  save_checkpoint(p1, m);
  Model back = load_checkpoint(p1);
  save_checkpoint(p2, back);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  CHECK(b1.substr(0, 4) == "PMCK");

  std::ofstream junk(dir / "junk.ckpt", std::ios::binary);
  junk << "WHAT";
  junk.close();
  CHECK_THROWS_AS(load_checkpoint((dir / "junk.ckpt").string()), IoError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), IoError);
}
