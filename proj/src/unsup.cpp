#include "patchmix/unsup.hpp"

#include <cmath>
#include <limits>

namespace patchmix {

namespace {

struct CosRow {
  std::vector<double> cos;    // against each key (batch then bank)
  std::vector<double> knorm;  // cached key norms
};

double vec_norm(const std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  return std::sqrt(n2);
}

// One InfoNCE term for a single query vector against all keys. Returns the
// loss; if dq is set, adds the gradient (keys are constants).
double nce_term(const double* q, int c,
                const std::vector<std::vector<double>>& keys,
                const std::vector<double>& key_norms, int positive, double T,
                double* dq) {
  double qn2 = 0.0;
  for (int i = 0; i < c; ++i) qn2 += q[i] * q[i];
  double qn = std::sqrt(qn2);
  if (qn == 0.0) throw DegenerateInputError("contrastive loss: zero-norm query");

  const size_t nk = keys.size();
  std::vector<double> logits(nk);
  for (size_t j = 0; j < nk; ++j) {
    double d = 0.0;
    for (int i = 0; i < c; ++i) d += q[i] * keys[j][i];
    logits[j] = d / (qn * key_norms[j]) / T;
  }
  std::vector<double> p = softmax(logits, 1.0);
  double loss = -std::log(std::max(p[positive], 1e-300));
  if (dq) {
    for (size_t j = 0; j < nk; ++j) {
      double g = (p[j] - (static_cast<int>(j) == positive ? 1.0 : 0.0)) / T;
      if (g == 0.0) continue;
      double d = 0.0;
      for (int i = 0; i < c; ++i) d += q[i] * keys[j][i];
      double cos = d / (qn * key_norms[j]);
      double inv = 1.0 / (qn * key_norms[j]);
      for (int i = 0; i < c; ++i)
        dq[i] += g * (keys[j][i] * inv - cos * q[i] / qn2);
    }
  }
  return loss;
}

std::vector<std::vector<double>> all_keys(
    const std::vector<std::vector<double>>& k,
    const std::vector<std::vector<double>>& bank) {
  std::vector<std::vector<double>> keys = k;
  keys.insert(keys.end(), bank.begin(), bank.end());
  return keys;
}

std::vector<double> key_norms(const std::vector<std::vector<double>>& keys) {
  std::vector<double> norms(keys.size());
  for (size_t j = 0; j < keys.size(); ++j) {
    norms[j] = vec_norm(keys[j]);
    if (norms[j] == 0.0)
      throw DegenerateInputError("contrastive loss: zero-norm key");
  }
  return norms;
}

}  // namespace

double moco_loss(const std::vector<std::vector<double>>& q,
                 const std::vector<std::vector<double>>& k, double T,
                 const std::vector<std::vector<double>>& bank,
                 std::vector<std::vector<double>>* dq) {
  if (!(T > 0.0)) throw ArgumentError("moco_loss: T must be positive");
  if (q.size() != k.size())
    throw ArgumentError("moco_loss: query/key batch mismatch");
  if (q.empty()) throw ArgumentError("moco_loss: empty batch");
  const int c = static_cast<int>(q[0].size());
  auto keys = all_keys(k, bank);
  auto norms = key_norms(keys);
  if (dq) dq->assign(q.size(), std::vector<double>(c, 0.0));
  double loss = 0.0;
  for (size_t i = 0; i < q.size(); ++i)
    loss += nce_term(q[i].data(), c, keys, norms, static_cast<int>(i), T,
                     dq ? (*dq)[i].data() : nullptr);
  return loss;
}

double patchmoco_loss(const std::vector<FeatureMap>& q_maps,
                      const std::vector<std::vector<double>>& k, double T,
                      const std::vector<std::vector<uint8_t>>& switch_masks,
                      const std::vector<std::vector<double>>& bank,
                      std::vector<FeatureMap>* dq) {
  if (!(T > 0.0)) throw ArgumentError("patchmoco_loss: T must be positive");
  if (q_maps.size() != k.size() || q_maps.size() != switch_masks.size())
    throw ArgumentError("patchmoco_loss: batch size mismatch");
  if (q_maps.empty()) throw ArgumentError("patchmoco_loss: empty batch");
  const int c = q_maps[0].feat_dim;
  auto keys = all_keys(k, bank);
  auto norms = key_norms(keys);
  if (dq) {
    dq->clear();
    for (const FeatureMap& f : q_maps)
      dq->emplace_back(f.feat_dim, f.grid_h, f.grid_w);
  }
  double loss = 0.0;
  for (size_t i = 0; i < q_maps.size(); ++i) {
    const FeatureMap& f = q_maps[i];
    if (static_cast<int>(switch_masks[i].size()) != f.cells())
      throw ArgumentError("patchmoco_loss: mask size mismatch");
    for (int cell = 0; cell < f.cells(); ++cell) {
      if (switch_masks[i][cell] == 0) continue;  // switched: contributes 0
      loss += nce_term(f.cell(cell), c, keys, norms, static_cast<int>(i), T,
                       dq ? (*dq)[i].cell(cell) : nullptr);
    }
  }
  return loss;
}

double dense_loss(const std::vector<FeatureMap>& q_maps,
                  const std::vector<std::vector<double>>& k, double T,
                  const std::vector<std::vector<double>>& bank,
                  std::vector<FeatureMap>* dq) {
  if (q_maps.empty()) throw ArgumentError("dense_loss: empty batch");
  std::vector<std::vector<uint8_t>> ones;
  for (const FeatureMap& f : q_maps)
    ones.emplace_back(static_cast<size_t>(f.cells()), uint8_t{1});
  return patchmoco_loss(q_maps, k, T, ones, bank, dq);
}

void momentum_update(Model& key_model, const Model& query_model, double m) {
  if (m < 0.0 || m >= 1.0)
    throw ArgumentError("momentum_update: m must be in [0,1)");
  auto kp = param_list(key_model);
  auto qp = param_list(query_model);
  for (size_t i = 0; i < kp.size(); ++i) {
    if (kp[i]->numel() != qp[i]->numel())
      throw ArgumentError("momentum_update: model shape mismatch");
    for (size_t j = 0; j < kp[i]->numel(); ++j)
      (*kp[i])[j] = static_cast<float>(m * static_cast<double>((*kp[i])[j]) +
                                       (1.0 - m) *
                                           static_cast<double>((*qp[i])[j]));
  }
}

void KeyBank::push(std::vector<double> key) {
  if (capacity_ == 0) return;
  if (keys_.size() < capacity_) {
    keys_.push_back(std::move(key));
  } else {
    keys_[next_] = std::move(key);
  }
  next_ = (next_ + 1) % capacity_;
}

// ----------------------------------------------------------------- kmeans

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                    Rng& rng, int max_iter) {
  const int n = static_cast<int>(points.size());
  if (k < 1) throw ArgumentError("kmeans: k must be positive");
  if (k > n) throw ArgumentError("kmeans: k exceeds the number of points");

  KmeansResult res;
  res.centroids.reserve(k);

  // k-means++ seeding
  res.centroids.push_back(points[rng.below(n)]);
  std::vector<double> d2(n);
  for (int j = 1; j < k; ++j) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : res.centroids)
        best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      res.centroids.push_back(points[rng.below(n)]);
      continue;
    }
    double r = rng.uniform(0.0, total);
    int pick = n - 1;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += d2[i];
      if (r < acc) {
        pick = i;
        break;
      }
    }
    res.centroids.push_back(points[pick]);
  }

  res.assign.assign(n, -1);
  const size_t dim = points[0].size();
  for (int it = 0; it < max_iter; ++it) {
    // assignment
    bool changed = false;
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = sq_dist(points[i], res.centroids[0]);
      for (int j = 1; j < k; ++j) {
        double d = sq_dist(points[i], res.centroids[j]);
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      if (res.assign[i] != best) changed = true;
      res.assign[i] = best;
      inertia += bd;
    }
    res.inertia_trace.push_back(inertia);
    res.inertia = inertia;
    res.iterations = it + 1;
    if (!changed && it > 0) break;

    // update; empty clusters grab the point farthest from its centroid
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      for (size_t d = 0; d < dim; ++d) sums[res.assign[i]][d] += points[i][d];
      ++counts[res.assign[i]];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[j] > 0) {
        for (size_t d = 0; d < dim; ++d)
          res.centroids[j][d] = sums[j][d] / counts[j];
      } else {
        int far = 0;
        double fd = -1.0;
        for (int i = 0; i < n; ++i) {
          double d = sq_dist(points[i], res.centroids[res.assign[i]]);
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        res.centroids[j] = points[far];
      }
    }
  }
  return res;
}

std::vector<std::vector<int>> kmeans_pseudolabels(
    const std::vector<std::vector<double>>& points, int k, int n_partitions,
    Rng& rng, int max_iter) {
  if (n_partitions < 1)
    throw ArgumentError("kmeans_pseudolabels: need at least one partition");
  std::vector<std::vector<int>> parts;
  for (int p = 0; p < n_partitions; ++p) {
    Rng child = rng.split();
    parts.push_back(kmeans(points, k, child, max_iter).assign);
  }
  return parts;
}

}  // namespace patchmix
