// PatchMix augmentation: box sampling, pixel mask, mixed image and the
// patch-level label map, plus CutMix and Mixup baselines for ablations.
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "patchmix/tensor.hpp"

namespace patchmix {

// Axis-aligned box, inclusive pixel boundaries. An empty box (lambda -> 1)
// is encoded as w2 < w1 (and h2 < h1).
struct MixBox {
  double cw = 0.0, ch = 0.0;      // sampled center
  double w_hat = 0.0, h_hat = 0.0;  // real-valued box size, Eq. style W*sqrt(1-lambda)
  int w1 = 0, w2 = -1;            // column range
  int h1 = 0, h2 = -1;            // row range
  bool empty() const { return w2 < w1 || h2 < h1; }
};

// One PatchMix event: the mask is 1 exactly on the box; the label map holds
// per-feature-cell hard class targets.
struct MixSpec {
  MixBox box;
  TensorF32 mask;               // H x W of {0,1}
  std::vector<int> label_map;   // grid_h x grid_w, row-major
  int grid_h = 0, grid_w = 0;
  double lambda = 0.0;
  int query_label = 0, gallery_label = 0;
};

// Samples lambda ~ U(0,1) and a box of size (W*sqrt(1-lambda), H*sqrt(1-lambda))
// whose center keeps it fully inside the image. Degenerate sizes collapse the
// center interval to the midpoint.
std::pair<double, MixBox> sample_box(int width, int height, Rng& rng);

// Same mechanics with the box size forced from a given lambda (tests, limits).
MixBox box_from_lambda(int width, int height, double lambda, Rng& rng);

// Cell-level {0,1} grid for a box: cell is inside iff its center lies in the
// pixel box [w1, w2+1) x [h1, h2+1) scaled into cell units.
std::vector<uint8_t> cell_mask(const MixBox& box, int width, int height,
                               int grid_h, int grid_w);

// Mixed image: gallery pixels inside the box, query outside; label map takes
// the gallery label on cells inside the scaled box.
std::pair<TensorF32, MixSpec> patchmix(const TensorF32& query,
                                       const TensorF32& gallery, int q_label,
                                       int g_label, int grid_h, int grid_w,
                                       Rng& rng);

// As patchmix but with a caller-forced lambda (degenerate-limit tests).
std::pair<TensorF32, MixSpec> patchmix_with_lambda(const TensorF32& query,
                                                   const TensorF32& gallery,
                                                   int q_label, int g_label,
                                                   int grid_h, int grid_w,
                                                   double lambda, Rng& rng);

// The complementary mixed image: query pixels inside the box, gallery outside.
TensorF32 mix_complement(const TensorF32& query, const TensorF32& gallery,
                         const MixSpec& spec);

// CutMix: same box mechanics, image-level soft label
// lambda*onehot(q) + (1-lambda)*onehot(g).
std::pair<TensorF32, std::vector<double>> cutmix(const TensorF32& query,
                                                 const TensorF32& gallery,
                                                 int q_label, int g_label,
                                                 int n_classes, Rng& rng);

// Mixup: pixelwise convex combination with weight lambda on the query.
std::pair<TensorF32, std::vector<double>> mixup(const TensorF32& query,
                                                const TensorF32& gallery,
                                                int q_label, int g_label,
                                                int n_classes, Rng& rng);

}  // namespace patchmix
