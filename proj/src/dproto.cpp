#include "patchmix/dproto.hpp"

#include <cmath>

namespace patchmix {

Prototypes prototypes(const std::vector<FeatureMap>& support_features,
                      const std::vector<int>& labels, int way, int shot) {
  if (support_features.size() != labels.size())
    throw ArgumentError("prototypes: feature/label count mismatch");
  if (way < 1 || shot < 1) throw ArgumentError("prototypes: bad way/shot");
  if (support_features.empty())
    throw ArgumentError("prototypes: no support features");

  const int c = support_features[0].feat_dim;
  Prototypes protos;
  protos.way = way;
  protos.feat_dim = c;
  protos.p.assign(static_cast<size_t>(way) * c, 0.0);
  std::vector<int> counts(way, 0);

  for (size_t j = 0; j < support_features.size(); ++j) {
    int y = labels[j];
    if (y < 0 || y >= way)
      throw ArgumentError("prototypes: label out of range");
    std::vector<double> pooled = support_features[j].pooled();
    double* row = protos.row(y);
    for (int i = 0; i < c; ++i) row[i] += pooled[i];
    ++counts[y];
  }
  for (int y = 0; y < way; ++y) {
    if (counts[y] != shot)
      throw ArgumentError("prototypes: class " + std::to_string(y) + " has " +
                          std::to_string(counts[y]) + " supports, expected " +
                          std::to_string(shot));
    double* row = protos.row(y);
    for (int i = 0; i < c; ++i) row[i] /= shot;
  }
  return protos;
}

void backward_prototypes(const std::vector<double>& dprotos,
                         const std::vector<int>& labels, int way, int shot,
                         std::vector<FeatureMap>& dfeats) {
  if (dfeats.size() != labels.size())
    throw ArgumentError("backward_prototypes: feature/label count mismatch");
  for (size_t j = 0; j < dfeats.size(); ++j) {
    FeatureMap& df = dfeats[j];
    const int c = df.feat_dim, cells = df.cells();
    const double* drow = dprotos.data() +
                         static_cast<size_t>(labels[j]) * c;
    double inv = 1.0 / (static_cast<double>(shot) * cells);
    for (int cell = 0; cell < cells; ++cell) {
      double* d = df.cell(cell);
      for (int i = 0; i < c; ++i) d[i] += drow[i] * inv;
    }
  }
  (void)way;
}

ConfidenceMap confidence_map(const FeatureMap& query,
                             const Prototypes& protos) {
  if (query.feat_dim != protos.feat_dim)
    throw ArgumentError("confidence_map: feature dim mismatch");
  ConfidenceMap conf;
  conf.way = protos.way;
  conf.grid_h = query.grid_h;
  conf.grid_w = query.grid_w;
  conf.map.resize(static_cast<size_t>(protos.way) * query.cells());

  const int c = query.feat_dim;
  std::vector<double> pnorm(protos.way);
  for (int i = 0; i < protos.way; ++i) {
    double n2 = 0.0;
    const double* p = protos.row(i);
    for (int k = 0; k < c; ++k) n2 += p[k] * p[k];
    pnorm[i] = std::sqrt(n2);
    if (pnorm[i] == 0.0)
      throw DegenerateInputError("confidence_map: zero-norm prototype");
  }
  for (int cell = 0; cell < query.cells(); ++cell) {
    const double* x = query.cell(cell);
    double xn2 = 0.0;
    for (int k = 0; k < c; ++k) xn2 += x[k] * x[k];
    double xn = std::sqrt(xn2);
    if (xn == 0.0)
      throw DegenerateInputError("confidence_map: zero-norm feature column");
    for (int i = 0; i < protos.way; ++i) {
      const double* p = protos.row(i);
      double d = 0.0;
      for (int k = 0; k < c; ++k) d += x[k] * p[k];
      conf.map[static_cast<size_t>(i) * query.cells() + cell] =
          d / (xn * pnorm[i]);
    }
  }
  return conf;
}

void backward_confidence(const FeatureMap& query, const Prototypes& protos,
                         const ConfidenceMap& dconf, FeatureMap& dquery,
                         std::vector<double>& dprotos) {
  const int c = query.feat_dim;
  const int cells = query.cells();
  if (dprotos.size() != protos.p.size())
    throw ArgumentError("backward_confidence: dprotos size mismatch");

  std::vector<double> pnorm(protos.way);
  for (int i = 0; i < protos.way; ++i) {
    const double* p = protos.row(i);
    double n2 = 0.0;
    for (int k = 0; k < c; ++k) n2 += p[k] * p[k];
    pnorm[i] = std::sqrt(n2);
  }
  for (int cell = 0; cell < cells; ++cell) {
    const double* x = query.cell(cell);
    double* dx = dquery.cell(cell);
    double xn2 = 0.0;
    for (int k = 0; k < c; ++k) xn2 += x[k] * x[k];
    double xn = std::sqrt(xn2);
    for (int i = 0; i < protos.way; ++i) {
      double g = dconf.map[static_cast<size_t>(i) * cells + cell];
      if (g == 0.0) continue;
      const double* p = protos.row(i);
      double d = 0.0;
      for (int k = 0; k < c; ++k) d += x[k] * p[k];
      double cos = d / (xn * pnorm[i]);
      double* dp = dprotos.data() + static_cast<size_t>(i) * c;
      double inv_xp = 1.0 / (xn * pnorm[i]);
      for (int k = 0; k < c; ++k) {
        dx[k] += g * (p[k] * inv_xp - cos * x[k] / xn2);
        dp[k] += g * (x[k] * inv_xp - cos * p[k] / (pnorm[i] * pnorm[i]));
      }
    }
  }
}

double fewshot_loss(const ConfidenceMap& conf, const std::vector<int>& label_map,
                    double scale) {
  const int cells = conf.cells();
  if (static_cast<int>(label_map.size()) != cells)
    throw ArgumentError("fewshot_loss: label map size mismatch");
  double loss = 0.0;
  std::vector<double> logits(conf.way);
  for (int cell = 0; cell < cells; ++cell) {
    int y = label_map[cell];
    if (y < 0 || y >= conf.way)
      throw ArgumentError("fewshot_loss: label out of range");
    for (int i = 0; i < conf.way; ++i) logits[i] = scale * conf.at(i, cell);
    std::vector<double> p = softmax(logits, 1.0);
    loss -= std::log(std::max(p[y], 1e-300));
  }
  return loss / cells;
}

ConfidenceMap backward_fewshot(const ConfidenceMap& conf,
                               const std::vector<int>& label_map,
                               double scale) {
  const int cells = conf.cells();
  ConfidenceMap dconf;
  dconf.way = conf.way;
  dconf.grid_h = conf.grid_h;
  dconf.grid_w = conf.grid_w;
  dconf.map.assign(conf.map.size(), 0.0);
  std::vector<double> logits(conf.way);
  for (int cell = 0; cell < cells; ++cell) {
    int y = label_map[cell];
    for (int i = 0; i < conf.way; ++i) logits[i] = scale * conf.at(i, cell);
    std::vector<double> p = softmax(logits, 1.0);
    for (int i = 0; i < conf.way; ++i)
      dconf.map[static_cast<size_t>(i) * cells + cell] =
          scale * (p[i] - (i == y ? 1.0 : 0.0)) / cells;
  }
  return dconf;
}

double ce_per_cell(const std::vector<double>& logits, int n_classes,
                   const std::vector<int>& targets,
                   std::vector<double>* dlogits) {
  const int cells = static_cast<int>(targets.size());
  if (logits.size() != static_cast<size_t>(cells) * n_classes)
    throw ArgumentError("ce_per_cell: logits size mismatch");
  if (dlogits) dlogits->assign(logits.size(), 0.0);
  double loss = 0.0;
  for (int cell = 0; cell < cells; ++cell) {
    int y = targets[cell];
    if (y < 0 || y >= n_classes)
      throw ArgumentError("ce_per_cell: target out of range");
    std::vector<double> z(logits.begin() + static_cast<size_t>(cell) * n_classes,
                          logits.begin() + static_cast<size_t>(cell + 1) * n_classes);
    std::vector<double> p = softmax(z, 1.0);
    loss -= std::log(std::max(p[y], 1e-300));
    if (dlogits)
      for (int i = 0; i < n_classes; ++i)
        (*dlogits)[static_cast<size_t>(cell) * n_classes + i] =
            (p[i] - (i == y ? 1.0 : 0.0)) / cells;
  }
  return loss / cells;
}

double ce_pooled(const std::vector<double>& logits, int n_classes,
                 const std::vector<double>& target,
                 std::vector<double>* dlogits) {
  if (static_cast<int>(target.size()) != n_classes)
    throw ArgumentError("ce_pooled: target size mismatch");
  if (logits.size() % n_classes != 0)
    throw ArgumentError("ce_pooled: logits size mismatch");
  const int cells = static_cast<int>(logits.size()) / n_classes;
  std::vector<double> zbar(n_classes, 0.0);
  for (int cell = 0; cell < cells; ++cell)
    for (int i = 0; i < n_classes; ++i)
      zbar[i] += logits[static_cast<size_t>(cell) * n_classes + i];
  for (double& v : zbar) v /= cells;
  std::vector<double> p = softmax(zbar, 1.0);
  double loss = 0.0;
  for (int i = 0; i < n_classes; ++i)
    if (target[i] != 0.0) loss -= target[i] * std::log(std::max(p[i], 1e-300));
  if (dlogits) {
    dlogits->assign(logits.size(), 0.0);
    for (int cell = 0; cell < cells; ++cell)
      for (int i = 0; i < n_classes; ++i)
        (*dlogits)[static_cast<size_t>(cell) * n_classes + i] =
            (p[i] - target[i]) / cells;
  }
  return loss;
}

double ce_pooled_conf(const ConfidenceMap& conf,
                      const std::vector<double>& target, double scale,
                      ConfidenceMap* dconf) {
  if (static_cast<int>(target.size()) != conf.way)
    throw ArgumentError("ce_pooled_conf: target size mismatch");
  const int cells = conf.cells();
  std::vector<double> zbar(conf.way, 0.0);
  for (int i = 0; i < conf.way; ++i) {
    for (int cell = 0; cell < cells; ++cell) zbar[i] += conf.at(i, cell);
    zbar[i] = scale * zbar[i] / cells;
  }
  std::vector<double> p = softmax(zbar, 1.0);
  double loss = 0.0;
  for (int i = 0; i < conf.way; ++i)
    if (target[i] != 0.0) loss -= target[i] * std::log(std::max(p[i], 1e-300));
  if (dconf) {
    dconf->way = conf.way;
    dconf->grid_h = conf.grid_h;
    dconf->grid_w = conf.grid_w;
    dconf->map.assign(conf.map.size(), 0.0);
    for (int i = 0; i < conf.way; ++i) {
      double g = scale * (p[i] - target[i]) / cells;
      for (int cell = 0; cell < cells; ++cell)
        dconf->map[static_cast<size_t>(i) * cells + cell] = g;
    }
  }
  return loss;
}

double total_loss(double lf, double lg) { return lf + 0.5 * lg; }

std::pair<int, std::vector<double>> predict(const ConfidenceMap& conf) {
  std::vector<double> scores(conf.way, 0.0);
  const int cells = conf.cells();
  for (int i = 0; i < conf.way; ++i) {
    for (int cell = 0; cell < cells; ++cell) scores[i] += conf.at(i, cell);
    scores[i] /= cells;
  }
  int best = 0;
  for (int i = 1; i < conf.way; ++i)
    if (scores[i] > scores[best]) best = i;  // ties keep the lowest index
  return {best, scores};
}

}  // namespace patchmix
