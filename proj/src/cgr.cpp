#include "patchmix/cgr.hpp"

#include <algorithm>
#include <cmath>

namespace patchmix {

namespace {

void check_pair(const MixedPair& pair) {
  if (pair.x_q.feat_dim != pair.x_g.feat_dim ||
      pair.x_q.cells() != pair.x_g.cells())
    throw ArgumentError("cgr: mixed pair shape mismatch");
  if (static_cast<int>(pair.mask_cells.size()) != pair.x_q.cells())
    throw ArgumentError("cgr: mask_cells size mismatch");
}

inline double clamp01(double p) {
  return std::min(1.0 - 1e-12, std::max(1e-12, p));
}

}  // namespace

PatchConfidence patch_confidence(const MixedPair& pair) {
  check_pair(pair);
  const int cells = pair.x_q.cells(), c = pair.x_q.feat_dim;
  PatchConfidence out;
  out.alpha_q.assign(cells, 0.0);
  out.alpha_g.assign(cells, 0.0);
  for (int j = 0; j < cells; ++j) {
    const double* xq_j = pair.x_q.cell(j);
    const double* xg_j = pair.x_g.cell(j);
    double aq = 0.0, ag = 0.0;
    for (int k = 0; k < cells; ++k) {
      if (k == j) continue;
      if (pair.mask_cells[k] == 0) {
        const double* ref = pair.x_q.cell(k);
        double d = 0.0;
        for (int i = 0; i < c; ++i) d += ref[i] * xq_j[i];
        aq += d;
      } else {
        const double* ref = pair.x_g.cell(k);
        double d = 0.0;
        for (int i = 0; i < c; ++i) d += ref[i] * xg_j[i];
        ag += d;
      }
    }
    out.alpha_q[j] = aq;
    out.alpha_g[j] = ag;
  }
  return out;
}

void backward_patch_confidence(const MixedPair& pair,
                               const std::vector<double>& dalpha_q,
                               const std::vector<double>& dalpha_g,
                               FeatureMap& dx_q, FeatureMap& dx_g) {
  check_pair(pair);
  const int cells = pair.x_q.cells(), c = pair.x_q.feat_dim;
  for (int j = 0; j < cells; ++j) {
    double gq = dalpha_q[j], gg = dalpha_g[j];
    if (gq == 0.0 && gg == 0.0) continue;
    const double* xq_j = pair.x_q.cell(j);
    const double* xg_j = pair.x_g.cell(j);
    double* dxq_j = dx_q.cell(j);
    double* dxg_j = dx_g.cell(j);
    for (int k = 0; k < cells; ++k) {
      if (k == j) continue;
      if (pair.mask_cells[k] == 0) {
        const double* ref = pair.x_q.cell(k);
        double* dref = dx_q.cell(k);
        for (int i = 0; i < c; ++i) {
          dxq_j[i] += gq * ref[i];
          dref[i] += gq * xq_j[i];
        }
      } else {
        const double* ref = pair.x_g.cell(k);
        double* dref = dx_g.cell(k);
        for (int i = 0; i < c; ++i) {
          dxg_j[i] += gg * ref[i];
          dref[i] += gg * xg_j[i];
        }
      }
    }
  }
}

SelectionWeights normalize_select(const std::vector<double>& alpha_q,
                                  const std::vector<double>& alpha_g, double T,
                                  Rng& rng, bool hard) {
  if (!(T > 0.0))
    throw ArgumentError("normalize_select: temperature must be positive");
  if (alpha_q.size() != alpha_g.size())
    throw ArgumentError("normalize_select: alpha size mismatch");
  const size_t cells = alpha_q.size();
  SelectionWeights w;
  w.hard = hard;
  w.temperature = T;
  w.ahat_q.resize(cells);
  w.ahat_g.resize(cells);
  w.soft_q.resize(cells);
  w.soft_g.resize(cells);
  auto gumbel = [&rng]() {
    double u = std::min(1.0 - 1e-12, std::max(1e-12, rng.uniform01()));
    return -std::log(-std::log(u));
  };
  for (size_t j = 0; j < cells; ++j) {
    double sq = alpha_q[j] / T + gumbel();
    double sg = alpha_g[j] / T + gumbel();
    double wq = 1.0 / (1.0 + std::exp(sg - sq));
    w.soft_q[j] = wq;
    w.soft_g[j] = 1.0 - wq;
    if (hard) {
      w.ahat_q[j] = sq >= sg ? 1.0 : 0.0;
      w.ahat_g[j] = 1.0 - w.ahat_q[j];
    } else {
      w.ahat_q[j] = wq;
      w.ahat_g[j] = 1.0 - wq;
    }
  }
  return w;
}

void backward_select(const SelectionWeights& w,
                     const std::vector<double>& dsoft_q,
                     std::vector<double>& dalpha_q,
                     std::vector<double>& dalpha_g) {
  const size_t cells = w.soft_q.size();
  dalpha_q.assign(cells, 0.0);
  dalpha_g.assign(cells, 0.0);
  for (size_t j = 0; j < cells; ++j) {
    double sig = w.soft_q[j] * w.soft_g[j];  // d sigma / d (sq - sg)
    double g = dsoft_q[j] * sig / w.temperature;
    dalpha_q[j] = g;
    dalpha_g[j] = -g;
  }
}

FeatureMap merge(const MixedPair& pair, const SelectionWeights& w) {
  check_pair(pair);
  const int cells = pair.x_q.cells(), c = pair.x_q.feat_dim;
  FeatureMap out(c, pair.x_q.grid_h, pair.x_q.grid_w);
  for (int j = 0; j < cells; ++j) {
    double* o = out.cell(j);
    const double* xq = pair.x_q.cell(j);
    const double* xg = pair.x_g.cell(j);
    if (w.hard) {
      const double* src = w.ahat_q[j] == 1.0 ? xq : xg;
      std::copy(src, src + c, o);
    } else {
      for (int i = 0; i < c; ++i)
        o[i] = w.ahat_q[j] * xq[i] + w.ahat_g[j] * xg[i];
    }
  }
  return out;
}

FeatureMap merge_gallery(const MixedPair& pair, const SelectionWeights& w) {
  check_pair(pair);
  const int cells = pair.x_q.cells(), c = pair.x_q.feat_dim;
  FeatureMap out(c, pair.x_q.grid_h, pair.x_q.grid_w);
  for (int j = 0; j < cells; ++j) {
    double* o = out.cell(j);
    const double* xq = pair.x_q.cell(j);
    const double* xg = pair.x_g.cell(j);
    if (w.hard) {
      const double* src = w.ahat_g[j] == 1.0 ? xq : xg;
      std::copy(src, src + c, o);
    } else {
      for (int i = 0; i < c; ++i)
        o[i] = w.ahat_g[j] * xq[i] + w.ahat_q[j] * xg[i];
    }
  }
  return out;
}

void backward_merge(const MixedPair& pair, const SelectionWeights& w,
                    const FeatureMap& dmerged_q, const FeatureMap& dmerged_g,
                    FeatureMap& dx_q, FeatureMap& dx_g,
                    std::vector<double>& dsoft_q) {
  check_pair(pair);
  const int cells = pair.x_q.cells(), c = pair.x_q.feat_dim;
  if (static_cast<int>(dsoft_q.size()) != cells)
    throw ArgumentError("backward_merge: dsoft_q size mismatch");
  for (int j = 0; j < cells; ++j) {
    const double* xq = pair.x_q.cell(j);
    const double* xg = pair.x_g.cell(j);
    const double* dmq = dmerged_q.cell(j);
    const double* dmg = dmerged_g.cell(j);
    double* dxq = dx_q.cell(j);
    double* dxg = dx_g.cell(j);
    double aq = w.ahat_q[j], ag = w.ahat_g[j];
    double da_q = 0.0, da_g = 0.0;
    for (int i = 0; i < c; ++i) {
      // merged_q = aq*xq + ag*xg ; merged_g = ag*xq + aq*xg
      dxq[i] += aq * dmq[i] + ag * dmg[i];
      dxg[i] += ag * dmq[i] + aq * dmg[i];
      da_q += dmq[i] * xq[i] + dmg[i] * xg[i];
      da_g += dmq[i] * xg[i] + dmg[i] * xq[i];
    }
    // ahat_g = 1 - ahat_q; straight-through uses the soft sample's gradient
    dsoft_q[j] += da_q - da_g;
  }
}

double selection_loss(const SelectionWeights& w,
                      const std::vector<uint8_t>& mask_cells) {
  const size_t cells = w.soft_q.size();
  if (mask_cells.size() != cells)
    throw ArgumentError("selection_loss: mask size mismatch");
  double loss = 0.0;
  for (size_t j = 0; j < cells; ++j) {
    double pq = clamp01(w.soft_q[j]);
    // target for soft_q is 1 outside the box; the second term is the same
    // statement about soft_g and the box
    double tq = mask_cells[j] ? 0.0 : 1.0;
    loss -= tq * std::log(pq) + (1.0 - tq) * std::log(1.0 - pq);
    double pg = clamp01(w.soft_g[j]);
    double tg = 1.0 - tq;
    loss -= tg * std::log(pg) + (1.0 - tg) * std::log(1.0 - pg);
  }
  return loss / static_cast<double>(cells);
}

std::vector<double> backward_selection_loss(
    const SelectionWeights& w, const std::vector<uint8_t>& mask_cells) {
  const size_t cells = w.soft_q.size();
  std::vector<double> dsoft_q(cells, 0.0);
  for (size_t j = 0; j < cells; ++j) {
    double pq = clamp01(w.soft_q[j]);
    double tq = mask_cells[j] ? 0.0 : 1.0;
    // both BCE terms differentiate to the same expression in soft_q
    dsoft_q[j] = 2.0 * (pq - tq) / std::max(pq * (1.0 - pq), 1e-12) /
                 static_cast<double>(cells);
  }
  return dsoft_q;
}

double mae(const std::vector<double>& recon, const TensorF32& orig) {
  if (recon.size() != orig.numel())
    throw ArgumentError("mae: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < recon.size(); ++i)
    acc += std::fabs(recon[i] - static_cast<double>(orig[i]));
  return acc / static_cast<double>(recon.size());
}

std::vector<double> backward_mae(const std::vector<double>& recon,
                                 const TensorF32& orig) {
  std::vector<double> d(recon.size());
  double inv = 1.0 / static_cast<double>(recon.size());
  for (size_t i = 0; i < recon.size(); ++i) {
    double diff = recon[i] - static_cast<double>(orig[i]);
    d[i] = diff > 0.0 ? inv : (diff < 0.0 ? -inv : 0.0);
  }
  return d;
}

CgrLoss cgr_loss(const SelectionWeights& w,
                 const std::vector<uint8_t>& mask_cells,
                 const std::vector<double>& recon_q,
                 const std::vector<double>& recon_g, const TensorF32& orig_q,
                 const TensorF32& orig_g, double lambda_rec) {
  CgrLoss out;
  out.sel = selection_loss(w, mask_cells);
  out.rec = mae(recon_q, orig_q) + mae(recon_g, orig_g);
  out.cr = out.sel + lambda_rec * out.rec;
  return out;
}

}  // namespace patchmix
