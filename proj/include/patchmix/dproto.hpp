// Prototype head: class prototypes from support features, per-position
// cosine confidence maps, the two training losses, and image-level
// prediction. Forward and backward are paired free functions.
#pragma once

#include <utility>
#include <vector>

#include "patchmix/nets.hpp"
#include "patchmix/tensor.hpp"

namespace patchmix {

struct Prototypes {
  int way = 0, feat_dim = 0;
  std::vector<double> p;  // way x feat_dim
  double* row(int i) { return p.data() + static_cast<size_t>(i) * feat_dim; }
  const double* row(int i) const {
    return p.data() + static_cast<size_t>(i) * feat_dim;
  }
};

struct ConfidenceMap {
  int way = 0, grid_h = 0, grid_w = 0;
  std::vector<double> map;  // way x cells, values in [-1, 1]
  int cells() const { return grid_h * grid_w; }
  double at(int cls, int cell) const {
    return map[static_cast<size_t>(cls) * cells() + cell];
  }
};

// Eq.-style prototype: per class, mean over its K supports of the spatial
// mean feature vector. Requires exactly `shot` supports per class.
Prototypes prototypes(const std::vector<FeatureMap>& support_features,
                      const std::vector<int>& labels, int way, int shot);

// dprotos flows back into every contributing support feature map.
void backward_prototypes(const std::vector<double>& dprotos,
                         const std::vector<int>& labels, int way, int shot,
                         std::vector<FeatureMap>& dfeats);

// Cosine of each query feature column against each prototype.
ConfidenceMap confidence_map(const FeatureMap& query, const Prototypes& protos);

void backward_confidence(const FeatureMap& query, const Prototypes& protos,
                         const ConfidenceMap& dconf, FeatureMap& dquery,
                         std::vector<double>& dprotos);

// Per-position cross-entropy over logits scale*conf with the label map
// target, averaged over cells.
double fewshot_loss(const ConfidenceMap& conf, const std::vector<int>& label_map,
                    double scale);
ConfidenceMap backward_fewshot(const ConfidenceMap& conf,
                               const std::vector<int>& label_map, double scale);

// Cross-entropy helpers over a cells x n_classes logit block.
// Per-cell variant: one hard target per cell, averaged over cells.
double ce_per_cell(const std::vector<double>& logits, int n_classes,
                   const std::vector<int>& targets,
                   std::vector<double>* dlogits = nullptr);
// Pooled variant: logits are spatially averaged first, then a single
// cross-entropy against a target distribution.
double ce_pooled(const std::vector<double>& logits, int n_classes,
                 const std::vector<double>& target,
                 std::vector<double>* dlogits = nullptr);
// Pooled cross-entropy over a confidence map with logits scale*mean(conf).
double ce_pooled_conf(const ConfidenceMap& conf,
                      const std::vector<double>& target, double scale,
                      ConfidenceMap* dconf = nullptr);

// L = lf + 0.5 * lg
double total_loss(double lf, double lg);

// Spatial mean per class, argmax, lowest class index on ties.
std::pair<int, std::vector<double>> predict(const ConfidenceMap& conf);

}  // namespace patchmix
