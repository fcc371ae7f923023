// Trainable desk-scale networks: a weight-shared per-patch backbone, the
// global classifier head, and the mirrored patch decoder. Backprop is
// manual: forward passes retain activations, backward passes accumulate
// per-parameter gradients. Parameters are stored as float32; all internal
// arithmetic runs in float64 so gradients survive finite-difference checks.
#pragma once

#include <string>
#include <vector>

#include "patchmix/tensor.hpp"

namespace patchmix {

struct NetShape {
  int channels = 1;
  int height = 32, width = 32;
  int grid_h = 8, grid_w = 8;
  int d_hidden = 64;
  int feat_dim = 32;  // c
  int n_base = 5;     // global classifier width

  int patch_h() const { return height / grid_h; }
  int patch_w() const { return width / grid_w; }
  int patch_pixels() const { return channels * patch_h() * patch_w(); }
  int cells() const { return grid_h * grid_w; }
  void validate() const;
};

// Cell-major feature map: data[cell * feat_dim + ch], cell = r * grid_w + c.
struct FeatureMap {
  int feat_dim = 0, grid_h = 0, grid_w = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c, int gh, int gw)
      : feat_dim(c), grid_h(gh), grid_w(gw),
        data(static_cast<size_t>(c) * gh * gw, 0.0) {}
  int cells() const { return grid_h * grid_w; }
  double* cell(int i) { return data.data() + static_cast<size_t>(i) * feat_dim; }
  const double* cell(int i) const {
    return data.data() + static_cast<size_t>(i) * feat_dim;
  }
  // c x h x w float tensor view (serialization, shape-contract tests)
  TensorF32 to_chw() const;
  // spatial mean, length feat_dim
  std::vector<double> pooled() const;
};

// ------------------------------------------------------------ parameters

struct BackboneParams {
  TensorF32 a1;  // d_hidden x patch_pixels
  TensorF32 b1;  // d_hidden
  TensorF32 a2;  // feat_dim x d_hidden
  TensorF32 b2;  // feat_dim
};

struct GlobalClassifierParams {
  TensorF32 w;  // n_base x feat_dim
  TensorF32 b;  // n_base
};

struct DecoderParams {
  TensorF32 d1;  // d_hidden x feat_dim
  TensorF32 c1;  // d_hidden
  TensorF32 d2;  // patch_pixels x d_hidden
  TensorF32 c2;  // patch_pixels
};

struct Model {
  NetShape shape;
  BackboneParams backbone;
  GlobalClassifierParams gc;
  DecoderParams decoder;
};

Model init_model(const NetShape& shape, Rng& rng);

// Flat list of every trainable tensor, fixed order (backbone, gc, decoder).
std::vector<TensorF32*> param_list(Model& m);
std::vector<const TensorF32*> param_list(const Model& m);
std::vector<std::string> param_names();

// Per-parameter gradient accumulators, same order/sizes as param_list.
struct GradBuffer {
  std::vector<std::vector<double>> g;
  explicit GradBuffer(const Model& m);
  void zero();
  void add_scaled(const GradBuffer& other, double scale);
  bool all_finite() const;
};

// ---------------------------------------------------------- forward/backward

struct BackboneCache {
  std::vector<double> patches;  // cells x patch_pixels
  std::vector<double> pre1;     // cells x d_hidden
  std::vector<double> hidden;   // cells x d_hidden
};

// image -> feature map; each feature column depends only on its image patch
FeatureMap forward_backbone(const Model& m, const TensorF32& image,
                            BackboneCache* cache = nullptr);

// dfeat -> parameter gradients (needs the cache retained by forward)
void backward_backbone(const Model& m, const BackboneCache& cache,
                       const FeatureMap& dfeat, GradBuffer& grads);

// per-cell logits, cells x n_base
std::vector<double> forward_gc(const Model& m, const FeatureMap& feat);
// dlogits (cells x n_base) -> grads + upstream feature gradient
void backward_gc(const Model& m, const FeatureMap& feat,
                 const std::vector<double>& dlogits, GradBuffer& grads,
                 FeatureMap& dfeat);

struct DecoderCache {
  std::vector<double> input;   // cells x feat_dim
  std::vector<double> pre1;    // cells x d_hidden
  std::vector<double> hidden;  // cells x d_hidden
};

// feature map -> image-sized reconstruction (channels*height*width doubles)
std::vector<double> forward_decoder(const Model& m, const FeatureMap& feat,
                                    DecoderCache* cache = nullptr);
void backward_decoder(const Model& m, const DecoderCache& cache,
                      const std::vector<double>& dimage, GradBuffer& grads,
                      FeatureMap& dfeat);

// ------------------------------------------------------------------ sgd

struct SgdState {
  std::vector<std::vector<double>> velocity;
  explicit SgdState(const Model& m);
};

// v = momentum*v + g + weight_decay*theta; theta -= lr*v
void sgd_step(Model& m, const GradBuffer& grads, SgdState& state, double lr,
              double weight_decay, double momentum);

// lr0 * 0.5 * (1 + cos(pi * t / t_total))
double cosine_lr(double lr0, int t, int t_total);

// ----------------------------------------------------------- checkpoints

// Checkpoint file: magic "PMCK", u32 tensor count, then per tensor a u32
// name length, the name bytes, and a full "PMX1" tensor blob.
void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

}  // namespace patchmix
