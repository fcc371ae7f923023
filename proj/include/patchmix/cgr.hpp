// Correlation-guided reconstruction: confidence-weighted patch selection
// between the two mixed feature maps, gumbel-softmax normalization, merged
// maps for decoding, and the selection/reconstruction losses.
#pragma once

#include <cstdint>
#include <vector>

#include "patchmix/nets.hpp"
#include "patchmix/tensor.hpp"

namespace patchmix {

// Feature maps of the mixed query and its complementary mixed gallery, plus
// the cell-level box mask (1 = box region: gallery content in x_q, query
// content in x_g).
struct MixedPair {
  FeatureMap x_q;
  FeatureMap x_g;
  std::vector<uint8_t> mask_cells;
};

struct PatchConfidence {
  std::vector<double> alpha_q;  // per cell, evidence that x_q holds the query
  std::vector<double> alpha_g;  // per cell, evidence that x_g holds the query
};

// Each map's cell is compared against that map's known-query region:
// x_q cells outside the box, x_g cells inside it, self excluded.
PatchConfidence patch_confidence(const MixedPair& pair);

void backward_patch_confidence(const MixedPair& pair,
                               const std::vector<double>& dalpha_q,
                               const std::vector<double>& dalpha_g,
                               FeatureMap& dx_q, FeatureMap& dx_g);

struct SelectionWeights {
  std::vector<double> ahat_q;  // weight on x_q (one-hot in hard mode)
  std::vector<double> ahat_g;  // ahat_q + ahat_g == 1 per cell
  std::vector<double> soft_q;  // soft relaxation, used by the losses and
  std::vector<double> soft_g;  // the straight-through gradient
  bool hard = false;
  double temperature = 1.0;
};

// Per cell, gumbel-softmax over the pair (alpha_q, alpha_g)/T. Hard mode
// emits straight-through one-hot samples; the hard-pick distribution equals
// softmax((alpha_q - alpha_g)/T).
SelectionWeights normalize_select(const std::vector<double>& alpha_q,
                                  const std::vector<double>& alpha_g, double T,
                                  Rng& rng, bool hard);

// Upstream gradient w.r.t. soft_q -> gradients on the raw alphas.
void backward_select(const SelectionWeights& w,
                     const std::vector<double>& dsoft_q,
                     std::vector<double>& dalpha_q,
                     std::vector<double>& dalpha_g);

// Query reconstruction: per cell ahat_q*x_q + ahat_g*x_g. In hard mode the
// output column is a byte-exact copy of the selected input column.
FeatureMap merge(const MixedPair& pair, const SelectionWeights& w);
// Gallery reconstruction: the same weights applied crosswise.
FeatureMap merge_gallery(const MixedPair& pair, const SelectionWeights& w);

// Backward of both merges; accumulates into dx_q/dx_g and the selection
// gradient (straight-through in hard mode).
void backward_merge(const MixedPair& pair, const SelectionWeights& w,
                    const FeatureMap& dmerged_q, const FeatureMap& dmerged_g,
                    FeatureMap& dx_q, FeatureMap& dx_g,
                    std::vector<double>& dsoft_q);

// Per-cell binary cross-entropy of the soft selection against the ground
// truth mask (the box is where x_g holds the query).
double selection_loss(const SelectionWeights& w,
                      const std::vector<uint8_t>& mask_cells);
std::vector<double> backward_selection_loss(
    const SelectionWeights& w, const std::vector<uint8_t>& mask_cells);

// Mean absolute error of a decoded image against the original.
double mae(const std::vector<double>& recon, const TensorF32& orig);
std::vector<double> backward_mae(const std::vector<double>& recon,
                                 const TensorF32& orig);

struct CgrLoss {
  double cr = 0.0;   // sel + lambda_rec * rec
  double sel = 0.0;
  double rec = 0.0;
};

CgrLoss cgr_loss(const SelectionWeights& w,
                 const std::vector<uint8_t>& mask_cells,
                 const std::vector<double>& recon_q,
                 const std::vector<double>& recon_g, const TensorF32& orig_q,
                 const TensorF32& orig_g, double lambda_rec);

}  // namespace patchmix
