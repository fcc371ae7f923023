// Unsupervised adaptation: MoCo-style, dense, and patch-masked contrastive
// losses over cosine similarities, the momentum key encoder, and k-means
// pseudo-label construction.
#pragma once

#include <cstdint>
#include <vector>

#include "patchmix/nets.hpp"
#include "patchmix/tensor.hpp"

namespace patchmix {

// InfoNCE over spatially averaged features; positives pair q[i] with k[i],
// negatives are the other keys plus the optional bank. Summed over the batch.
double moco_loss(const std::vector<std::vector<double>>& q,
                 const std::vector<std::vector<double>>& k, double T,
                 const std::vector<std::vector<double>>& bank = {},
                 std::vector<std::vector<double>>* dq = nullptr);

// The dense variant: the loss applies at every spatial position of each
// query map, positives still pair image i with key vector i.
double dense_loss(const std::vector<FeatureMap>& q_maps,
                  const std::vector<std::vector<double>>& k, double T,
                  const std::vector<std::vector<double>>& bank = {},
                  std::vector<FeatureMap>* dq = nullptr);

// Dense loss with per-position terms multiplied by the switch mask
// (1 = patch kept, 0 = switched; switched positions contribute exactly 0).
double patchmoco_loss(const std::vector<FeatureMap>& q_maps,
                      const std::vector<std::vector<double>>& k, double T,
                      const std::vector<std::vector<uint8_t>>& switch_masks,
                      const std::vector<std::vector<double>>& bank = {},
                      std::vector<FeatureMap>* dq = nullptr);

// key = m*key + (1-m)*query, elementwise over every parameter tensor.
void momentum_update(Model& key_model, const Model& query_model, double m);

// Fixed-size FIFO of key vectors used as extra negatives.
class KeyBank {
 public:
  explicit KeyBank(size_t capacity) : capacity_(capacity) {}
  void push(std::vector<double> key);
  const std::vector<std::vector<double>>& keys() const { return keys_; }
  size_t size() const { return keys_.size(); }

 private:
  size_t capacity_;
  size_t next_ = 0;
  std::vector<std::vector<double>> keys_;
};

// ----------------------------------------------------------------- kmeans

struct KmeansResult {
  std::vector<int> assign;
  std::vector<std::vector<double>> centroids;
  std::vector<double> inertia_trace;  // one entry per Lloyd iteration
  double inertia = 0.0;
  int iterations = 0;
};

// k-means++ seeding then Lloyd to convergence (or max_iter); empty clusters
// are reseeded from the point farthest from its centroid.
KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                    Rng& rng, int max_iter = 100);

// n_partitions independent clusterings from split RNG streams.
std::vector<std::vector<int>> kmeans_pseudolabels(
    const std::vector<std::vector<double>>& points, int k, int n_partitions,
    Rng& rng, int max_iter = 100);

}  // namespace patchmix
