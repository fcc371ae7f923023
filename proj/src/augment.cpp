#include "patchmix/augment.hpp"

#include <cmath>

namespace patchmix {

namespace {

void check_image(const TensorF32& t, const char* what) {
  if (t.rank() != 3) throw ArgumentError(std::string(what) + ": expected C x H x W image");
}

std::vector<double> soft_label(int q_label, int g_label, int n_classes,
                               double lambda) {
  if (q_label < 0 || q_label >= n_classes || g_label < 0 ||
      g_label >= n_classes)
    throw ArgumentError("mix label out of range");
  std::vector<double> s(n_classes, 0.0);
  s[q_label] += lambda;
  s[g_label] += 1.0 - lambda;
  return s;
}

}  // namespace

MixBox box_from_lambda(int width, int height, double lambda, Rng& rng) {
  if (width < 2 || height < 2)
    throw ArgumentError("sample_box: image must be at least 2x2");
  MixBox box;
  double root = std::sqrt(std::max(0.0, 1.0 - lambda));
  box.w_hat = width * root;
  box.h_hat = height * root;

  // center ~ Unif(ceil(w_hat/2), W - ceil(w_hat/2)); a collapsed interval
  // (w_hat ~ W or 0-sized) degenerates to its midpoint.
  auto center = [&rng](double half_up, double extent) {
    double lo = half_up, hi = extent - half_up;
    return lo < hi ? rng.uniform(lo, hi) : extent / 2.0;
  };
  box.cw = center(std::ceil(box.w_hat / 2.0), width);
  box.ch = center(std::ceil(box.h_hat / 2.0), height);

  box.w1 = static_cast<int>(std::lround(box.cw - box.w_hat / 2.0));
  box.w2 = static_cast<int>(std::lround(box.cw + box.w_hat / 2.0)) - 1;
  box.h1 = static_cast<int>(std::lround(box.ch - box.h_hat / 2.0));
  box.h2 = static_cast<int>(std::lround(box.ch + box.h_hat / 2.0)) - 1;
  if (!box.empty()) {
    if (box.w1 < 0 || box.w2 >= width || box.h1 < 0 || box.h2 >= height)
      throw NumericError("sample_box: box escaped the image");
  }
  return box;
}

std::pair<double, MixBox> sample_box(int width, int height, Rng& rng) {
  double lambda = rng.uniform(0.0, 1.0);
  return {lambda, box_from_lambda(width, height, lambda, rng)};
}

std::vector<uint8_t> cell_mask(const MixBox& box, int width, int height,
                               int grid_h, int grid_w) {
  std::vector<uint8_t> cells(static_cast<size_t>(grid_h) * grid_w, 0);
  if (box.empty()) return cells;
  // scale the half-open pixel box [w1, w2+1) x [h1, h2+1) into cell units,
  // then test cell centers
  double sx = static_cast<double>(grid_w) / width;
  double sy = static_cast<double>(grid_h) / height;
  double x_lo = sx * box.w1, x_hi = sx * (box.w2 + 1);
  double y_lo = sy * box.h1, y_hi = sy * (box.h2 + 1);
  for (int r = 0; r < grid_h; ++r) {
    double yc = r + 0.5;
    if (yc < y_lo || yc >= y_hi) continue;
    for (int c = 0; c < grid_w; ++c) {
      double xc = c + 0.5;
      if (xc >= x_lo && xc < x_hi) cells[static_cast<size_t>(r) * grid_w + c] = 1;
    }
  }
  return cells;
}

namespace {

std::pair<TensorF32, MixSpec> patchmix_impl(const TensorF32& query,
                                            const TensorF32& gallery,
                                            int q_label, int g_label,
                                            int grid_h, int grid_w,
                                            double lambda, MixBox box) {
  check_image(query, "patchmix query");
  if (!query.same_shape(gallery))
    throw ArgumentError("patchmix: query/gallery shape mismatch");
  int channels = static_cast<int>(query.dim(0));
  int height = static_cast<int>(query.dim(1));
  int width = static_cast<int>(query.dim(2));
  if (grid_h < 1 || grid_w < 1)
    throw ArgumentError("patchmix: invalid feature grid");

  MixSpec spec;
  spec.box = box;
  spec.lambda = lambda;
  spec.query_label = q_label;
  spec.gallery_label = g_label;
  spec.grid_h = grid_h;
  spec.grid_w = grid_w;

  spec.mask = TensorF32({static_cast<uint32_t>(height),
                         static_cast<uint32_t>(width)});
  TensorF32 mixed = query;
  if (!box.empty()) {
    for (int y = box.h1; y <= box.h2; ++y)
      for (int x = box.w1; x <= box.w2; ++x) {
        spec.mask[static_cast<size_t>(y) * width + x] = 1.0f;
        for (int ch = 0; ch < channels; ++ch) {
          size_t idx = (static_cast<size_t>(ch) * height + y) * width + x;
          mixed[idx] = gallery[idx];
        }
      }
  }

  std::vector<uint8_t> cells = cell_mask(box, width, height, grid_h, grid_w);
  spec.label_map.resize(cells.size());
  for (size_t i = 0; i < cells.size(); ++i)
    spec.label_map[i] = cells[i] ? g_label : q_label;
  return {std::move(mixed), std::move(spec)};
}

}  // namespace

std::pair<TensorF32, MixSpec> patchmix(const TensorF32& query,
                                       const TensorF32& gallery, int q_label,
                                       int g_label, int grid_h, int grid_w,
                                       Rng& rng) {
  check_image(query, "patchmix query");
  int height = static_cast<int>(query.dim(1));
  int width = static_cast<int>(query.dim(2));
  auto [lambda, box] = sample_box(width, height, rng);
  return patchmix_impl(query, gallery, q_label, g_label, grid_h, grid_w,
                       lambda, box);
}

std::pair<TensorF32, MixSpec> patchmix_with_lambda(const TensorF32& query,
                                                   const TensorF32& gallery,
                                                   int q_label, int g_label,
                                                   int grid_h, int grid_w,
                                                   double lambda, Rng& rng) {
  check_image(query, "patchmix query");
  int height = static_cast<int>(query.dim(1));
  int width = static_cast<int>(query.dim(2));
  MixBox box = box_from_lambda(width, height, lambda, rng);
  return patchmix_impl(query, gallery, q_label, g_label, grid_h, grid_w,
                       lambda, box);
}

TensorF32 mix_complement(const TensorF32& query, const TensorF32& gallery,
                         const MixSpec& spec) {
  if (!query.same_shape(gallery))
    throw ArgumentError("mix_complement: shape mismatch");
  int channels = static_cast<int>(query.dim(0));
  int height = static_cast<int>(query.dim(1));
  int width = static_cast<int>(query.dim(2));
  TensorF32 out = gallery;
  const MixBox& box = spec.box;
  if (!box.empty()) {
    for (int y = box.h1; y <= box.h2; ++y)
      for (int x = box.w1; x <= box.w2; ++x)
        for (int ch = 0; ch < channels; ++ch) {
          size_t idx = (static_cast<size_t>(ch) * height + y) * width + x;
          out[idx] = query[idx];
        }
  }
  return out;
}

std::pair<TensorF32, std::vector<double>> cutmix(const TensorF32& query,
                                                 const TensorF32& gallery,
                                                 int q_label, int g_label,
                                                 int n_classes, Rng& rng) {
  auto [mixed, spec] = patchmix(query, gallery, q_label, g_label, 1, 1, rng);
  return {std::move(mixed), soft_label(q_label, g_label, n_classes, spec.lambda)};
}

std::pair<TensorF32, std::vector<double>> mixup(const TensorF32& query,
                                                const TensorF32& gallery,
                                                int q_label, int g_label,
                                                int n_classes, Rng& rng) {
  check_image(query, "mixup query");
  if (!query.same_shape(gallery))
    throw ArgumentError("mixup: query/gallery shape mismatch");
  double lambda = rng.uniform(0.0, 1.0);
  TensorF32 mixed = query;
  for (size_t i = 0; i < mixed.numel(); ++i)
    mixed[i] = static_cast<float>(lambda * query[i] + (1.0 - lambda) * gallery[i]);
  return {std::move(mixed), soft_label(q_label, g_label, n_classes, lambda)};
}

}  // namespace patchmix
