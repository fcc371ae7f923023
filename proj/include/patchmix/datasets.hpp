// Dataset model, N-way K-shot episode sampling, the synthetic SCM image
// generator, and manifest ingestion.
#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "patchmix/tensor.hpp"

namespace patchmix {

enum class Split { kBase, kVal, kNovel };

struct LabeledDataset {
  std::vector<TensorF32> images;  // all C x H x W, identical shapes
  std::vector<int> labels;
  int n_classes = 0;  // labels are < n_classes
  Split split = Split::kBase;

  size_t size() const { return images.size(); }
  void validate() const;  // throws ArgumentError on a broken invariant
};

// One N-way K-shot task. Images are referenced by dataset index; labels are
// remapped to 0..N-1 in class_map order.
struct Episode {
  int way = 0;
  int shot = 0;
  int queries_per_class = 0;
  std::vector<size_t> support_idx;  // way*shot entries, grouped by class
  std::vector<int> support_label;   // episode labels
  std::vector<size_t> query_idx;    // way*queries entries, grouped by class
  std::vector<int> query_label;
  std::vector<int> class_map;       // episode label -> original class id
};

Episode sample_episode(const LabeledDataset& ds, int way, int shot,
                       int queries_per_class, Rng& rng);

// ------------------------------------------------------------------ SCM

// Synthetic structural-causal-model data: class label Y draws a causal code
// S, an independent mixture component draws the non-causal code Z, and a
// selection bit C (train membership) depends on both, which is what couples
// them in the training split.
struct ScmConfig {
  int n_classes = 5;   // base classes
  int n_novel = 5;     // extra novel classes for the test split
  int dim_s = 0;       // causal code length; 0 = n_classes + n_novel
  int dim_z = 2;       // non-causal code length == number of z components
  double rho = 0.9;    // selection-bias strength in [0,1]
  int grid = 8;        // g x g patch grid; S occupies the top-left quadrant
  int image = 32;      // square image side, divisible by grid
  double noise_sigma = 0.1;
  double code_scale = 3.0;  // one-hot code magnitude for S
  double z_scale = 0.0;     // Z code magnitude; 0 = same as code_scale

  int total_classes() const { return n_classes + n_novel; }
  int dim_s_eff() const { return dim_s > 0 ? dim_s : total_classes(); }
  double z_scale_eff() const { return z_scale > 0.0 ? z_scale : code_scale; }
  void validate() const;
};

struct ScmSample {
  std::vector<float> s;
  std::vector<float> z;
  int y = 0;
  int z_component = 0;
  int c = 0;  // 1 = passed train selection, 0 = unbiased test draw
  size_t image_index = 0;  // row in the owning dataset
};

// Fixed random full-rank linear render maps, kept so tests can invert them.
struct ScmRender {
  // s_map: (s_pixels x dim_s), z_map: (z_pixels x dim_z), row-major
  std::vector<float> s_map;
  std::vector<float> z_map;
  int s_pixels = 0, z_pixels = 0;
  std::vector<size_t> s_pixel_index;  // image offsets of S-quadrant pixels
  std::vector<size_t> z_pixel_index;
};

struct ScmData {
  LabeledDataset train;  // base classes, C=1 (selection-biased)
  LabeledDataset test;   // novel classes, C=0 (unbiased)
  std::vector<ScmSample> train_samples;
  std::vector<ScmSample> test_samples;
  ScmRender render;
};

// Rejection sampling on (y, z): a draw whose z component matches the class's
// designated partner survives with probability rho, otherwise with 1 - rho.
ScmData generate_scm(const ScmConfig& cfg, int n_train, int n_test, Rng& rng);

// Spurious partner component for class y.
int scm_partner(const ScmConfig& cfg, int y);

// -------------------------------------------------------------- manifest

// Manifest: one record per image, `<relative tensor path>\t<integer label>`.
LabeledDataset load_dataset(const std::string& manifest_path, Split split);
void save_dataset(const LabeledDataset& ds, const std::string& dir,
                  const std::string& manifest_name);

}  // namespace patchmix
