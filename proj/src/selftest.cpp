#include "patchmix/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "patchmix/augment.hpp"
#include "patchmix/cgr.hpp"
#include "patchmix/config.hpp"
#include "patchmix/datasets.hpp"
#include "patchmix/dproto.hpp"
#include "patchmix/hardness.hpp"
#include "patchmix/metrics.hpp"
#include "patchmix/nets.hpp"
#include "patchmix/tensor.hpp"
#include "patchmix/trainer.hpp"
#include "patchmix/unsup.hpp"

namespace patchmix {

namespace {

struct Check {
  std::string name;
  std::function<std::string()> run;  // empty string = pass, else the failure
};

std::string failf(const char* fmt, double a, double b) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), fmt, a, b);
  return buf;
}

bool close(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

// ------------------------------------------------------------ tiny setup

FeatureMap random_feat(int c, int gh, int gw, Rng& rng) {
  FeatureMap f(c, gh, gw);
  for (double& v : f.data) v = rng.gaussian();
  return f;
}

TensorF32 random_image(int ch, int h, int w, Rng& rng) {
  TensorF32 t({static_cast<uint32_t>(ch), static_cast<uint32_t>(h),
               static_cast<uint32_t>(w)});
  for (size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.gaussian());
  return t;
}

// Small synthetic episode world shared by the gradient checks.
struct TinyWorld {
  RunConfig cfg;
  LabeledDataset ds;
  Episode ep;
  Model model;
};

TinyWorld tiny_world(uint64_t seed, bool cgr, const char* augment) {
  TinyWorld w;
  w.cfg.way = 3;
  w.cfg.shot = 2;
  w.cfg.queries = 2;
  w.cfg.grid = 3;
  w.cfg.feat_dim = 6;
  w.cfg.hidden = 7;
  w.cfg.augment = augment;
  w.cfg.cgr = cgr;
  w.cfg.cgr_hard = false;  // smooth relaxation for gradient checks
  w.cfg.logit_scale = 4.0;

  Rng rng(seed);
  w.ds.n_classes = 4;
  for (int i = 0; i < 16; ++i) {
    w.ds.images.push_back(random_image(1, 9, 9, rng));
    w.ds.labels.push_back(i % 4);
  }
  w.ds.validate();
  w.ep = sample_episode(w.ds, w.cfg.way, w.cfg.shot, w.cfg.queries, rng);

  NetShape shape;
  shape.channels = 1;
  shape.height = 9;
  shape.width = 9;
  shape.grid_h = 3;
  shape.grid_w = 3;
  shape.d_hidden = 7;
  shape.feat_dim = 6;
  shape.n_base = 4;
  w.model = init_model(shape, rng);
  return w;
}

// Max relative finite-difference error over every parameter of the model
// for the episode loss. The rng seed freezes boxes/gumbels across evals.
double fd_max_rel_err(TinyWorld& w, const Model* teacher, uint64_t rng_seed) {
  AugmentKind aug = augment_kind(w.cfg.augment);
  auto loss_at = [&](const Model& m) {
    return episode_forward_backward(m, w.cfg, w.ds, w.ep, aug, teacher,
                                    Rng(rng_seed), nullptr)
        .total;
  };
  GradBuffer grads(w.model);
  episode_forward_backward(w.model, w.cfg, w.ds, w.ep, aug, teacher,
                           Rng(rng_seed), &grads);

  const double eps = 1e-3;
  double worst = 0.0;
  auto params = param_list(w.model);
  for (size_t p = 0; p < params.size(); ++p) {
    TensorF32& t = *params[p];
    for (size_t j = 0; j < t.numel(); ++j) {
      float saved = t[j];
      t[j] = static_cast<float>(saved + eps);
      double up = loss_at(w.model);
      t[j] = static_cast<float>(saved - eps);
      double dn = loss_at(w.model);
      t[j] = saved;
      double fd = (up - dn) / (2.0 * eps);
      double an = grads.g[p][j];
      double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
      worst = std::max(worst, std::fabs(fd - an) / denom);
    }
  }
  return worst;
}

// --------------------------------------------------------------- checks

std::vector<Check> build_checks() {
  std::vector<Check> checks;
  auto add = [&checks](std::string name, std::function<std::string()> fn) {
    checks.push_back({std::move(name), std::move(fn)});
  };

  add("rng.golden_stream", [] {
    // frozen once from the chosen generator (xoshiro256** via splitmix64)
    Rng rng(7);
    double expect[3] = {0.7005764821796896, 0.27875122947378428,
                        0.83962746187641979};
    for (double e : expect) {
      double got = rng.uniform(0.0, 1.0);
      if (!close(got, e, 0.0)) return failf("draw %.17g != golden %.17g", got, e);
    }
    return std::string();
  });

  add("rng.uniform_range", [] {
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
      double v = rng.uniform(5.0, 5.0000001);
      if (v < 5.0 || v >= 5.0000001) return failf("value %g escaped [5,%g)", v, 5.0000001);
    }
    Rng a(3), b(3);
    for (int i = 0; i < 100; ++i)
      if (a.next_u64() != b.next_u64()) return std::string("streams diverged");
    return std::string();
  });

  add("kernels.softmax_cosine", [] {
    std::vector<double> s = softmax({0.0, std::log(3.0)}, 1.0);
    if (!close(s[0], 0.25, 1e-12) || !close(s[1], 0.75, 1e-12))
      return failf("softmax [%g %g] != [0.25 0.75]", s[0], s[1]);
    std::vector<double> sh = softmax({5.0, 5.0 + std::log(3.0)}, 1.0);
    if (!close(sh[0], s[0], 1e-12)) return std::string("softmax not shift invariant");
    std::vector<float> v = {1.f, 2.f, -3.f};
    std::vector<float> nv = {-1.f, -2.f, 3.f};
    if (!close(cosine(v, v), 1.0, 1e-12) || !close(cosine(v, nv), -1.0, 1e-12))
      return std::string("cosine identity/antipode failed");
    if (!close(cosine({1.f, 0.f}, {0.f, 1.f}), 0.0, 1e-12))
      return std::string("cosine orthogonality failed");
    return std::string();
  });

  add("augment.box_geometry", [] {
    Rng rng(21);
    const int W = 84, H = 84;
    for (int i = 0; i < 2000; ++i) {
      auto [lambda, box] = sample_box(W, H, rng);
      double area = box.empty() ? 0.0
                                : static_cast<double>(box.w2 - box.w1 + 1) *
                                      (box.h2 - box.h1 + 1);
      if (std::fabs(area - (1.0 - lambda) * W * H) > W + H)
        return failf("area %g vs target %g out of slack", area,
                     (1.0 - lambda) * W * H);
      if (!box.empty() &&
          (box.w1 < 0 || box.w2 >= W || box.h1 < 0 || box.h2 >= H))
        return std::string("box escaped the image");
    }
    return std::string();
  });

  add("augment.label_map_consistency", [] {
    Rng rng(22);
    const int W = 84, H = 84, g = 11;
    TensorF32 q = random_image(1, H, W, rng);
    TensorF32 ga = random_image(1, H, W, rng);
    for (int i = 0; i < 500; ++i) {
      auto [mixed, spec] = patchmix(q, ga, 0, 1, g, g, rng);
      double mask_frac = sum(spec.mask.data(), spec.mask.numel()) / (W * H);
      int gcells = 0;
      for (int v : spec.label_map) gcells += (v == 1);
      double cell_frac = static_cast<double>(gcells) / (g * g);
      if (std::fabs(cell_frac - mask_frac) >
          static_cast<double>(g + g) / (g * g))
        return failf("cell frac %g vs mask frac %g beyond bound", cell_frac,
                     mask_frac);
    }
    Rng r2(1);
    auto [m0, s0] = patchmix_with_lambda(q, ga, 0, 1, g, g, 0.0, r2);
    for (int v : s0.label_map)
      if (v != 1) return std::string("lambda=0 did not label all cells gallery");
    auto [m1, s1] = patchmix_with_lambda(q, ga, 0, 1, g, g, 1.0, r2);
    for (int v : s1.label_map)
      if (v != 0) return std::string("lambda=1 did not keep all cells query");
    for (size_t i = 0; i < m1.numel(); ++i)
      if (m1[i] != q[i]) return std::string("lambda=1 changed the query image");
    return std::string();
  });

  add("dproto.prototypes_oracle", [] {
    Rng rng(31);
    const int way = 4, shot = 5, c = 6;
    std::vector<FeatureMap> feats;
    std::vector<int> labels;
    for (int i = 0; i < way * shot; ++i) {
      feats.push_back(random_feat(c, 3, 3, rng));
      labels.push_back(i % way);
    }
    Prototypes protos = prototypes(feats, labels, way, shot);
    for (int y = 0; y < way; ++y)
      for (int k = 0; k < c; ++k) {
        double acc = 0.0;
        int n = 0;
        for (size_t j = 0; j < feats.size(); ++j) {
          if (labels[j] != y) continue;
          double m = 0.0;
          for (int cell = 0; cell < feats[j].cells(); ++cell)
            m += feats[j].cell(cell)[k];
          acc += m / feats[j].cells();
          ++n;
        }
        if (!close(protos.row(y)[k], acc / n, 1e-10))
          return failf("prototype %g != oracle %g", protos.row(y)[k], acc / n);
      }
    return std::string();
  });

  add("dproto.confidence_oracle", [] {
    Rng rng(32);
    FeatureMap q = random_feat(5, 3, 4, rng);
    Prototypes protos;
    protos.way = 3;
    protos.feat_dim = 5;
    protos.p.resize(15);
    for (double& v : protos.p) v = rng.gaussian();
    ConfidenceMap conf = confidence_map(q, protos);
    for (int i = 0; i < 3; ++i)
      for (int cell = 0; cell < q.cells(); ++cell) {
        double dotv = 0.0, nx = 0.0, np = 0.0;
        for (int k = 0; k < 5; ++k) {
          dotv += q.cell(cell)[k] * protos.row(i)[k];
          nx += q.cell(cell)[k] * q.cell(cell)[k];
          np += protos.row(i)[k] * protos.row(i)[k];
        }
        double oracle = dotv / (std::sqrt(nx) * std::sqrt(np));
        if (!close(conf.at(i, cell), oracle, 1e-10))
          return failf("conf %g != oracle %g", conf.at(i, cell), oracle);
      }
    return std::string();
  });

  add("dproto.fewshot_ce_oracle", [] {
    Rng rng(33);
    ConfidenceMap conf;
    conf.way = 4;
    conf.grid_h = 3;
    conf.grid_w = 3;
    conf.map.resize(36);
    for (double& v : conf.map) v = rng.uniform(-1.0, 1.0);
    std::vector<int> labels(9);
    for (int& l : labels) l = static_cast<int>(rng.below(4));
    double scale = 7.0;
    double got = fewshot_loss(conf, labels, scale);
    double oracle = 0.0;
    for (int cell = 0; cell < 9; ++cell) {
      double mx = -1e30, z = 0.0;
      for (int i = 0; i < 4; ++i) mx = std::max(mx, scale * conf.at(i, cell));
      for (int i = 0; i < 4; ++i) z += std::exp(scale * conf.at(i, cell) - mx);
      oracle -= scale * conf.at(labels[cell], cell) - mx - std::log(z);
    }
    oracle /= 9;
    if (!close(got, oracle, 1e-9)) return failf("lf %g != oracle %g", got, oracle);
    ConfidenceMap uniform = conf;
    std::fill(uniform.map.begin(), uniform.map.end(), 0.25);
    double lu = fewshot_loss(uniform, labels, scale);
    if (!close(lu, std::log(4.0), 1e-9))
      return failf("uniform conf loss %g != ln4 %g", lu, std::log(4.0));
    return std::string();
  });

  add("dproto.predict_oracle", [] {
    Rng rng(34);
    ConfidenceMap conf;
    conf.way = 5;
    conf.grid_h = 2;
    conf.grid_w = 3;
    conf.map.resize(30);
    for (double& v : conf.map) v = rng.uniform(-1.0, 1.0);
    auto [cls, scores] = predict(conf);
    int oracle = 0;
    double best = -1e30;
    for (int i = 0; i < 5; ++i) {
      double m = 0.0;
      for (int cell = 0; cell < 6; ++cell) m += conf.at(i, cell);
      m /= 6;
      if (!close(scores[i], m, 1e-12)) return std::string("score mismatch");
      if (m > best) {
        best = m;
        oracle = i;
      }
    }
    if (cls != oracle) return std::string("argmax mismatch");
    return std::string();
  });

  add("losses.identities", [] {
    Rng rng(35);
    for (int i = 0; i < 100; ++i) {
      double a = rng.gaussian(), b = rng.gaussian();
      if (!close(total_loss(a, b), a + 0.5 * b, 1e-15))
        return std::string("total_loss identity failed");
      if (!close(stage2_loss(a, b), a + b, 1e-15))
        return std::string("stage2_loss identity failed");
    }
    return std::string();
  });

  add("hardness.tsp_exact", [] {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 5;
      SimilarityGraph g;
      g.n = n;
      g.sim.assign(n * n, 0.0);
      for (int i = 0; i < n; ++i) {
        g.sim[i * n + i] = 1.0;
        for (int j = i + 1; j < n; ++j) {
          double s = rng.uniform(-1.0, 1.0);
          g.sim[i * n + j] = s;
          g.sim[j * n + i] = s;
        }
      }
      int start = static_cast<int>(rng.below(n));
      TspAssignment fast = tsp_hardest_path(g, start);
      TspAssignment brute = tsp_brute_force(g, start);
      if (!close(fast.cost, brute.cost, 1e-12))
        return failf("tsp cost %g != brute %g", fast.cost, brute.cost);
      for (int k = 1; k < n; ++k)
        if (fast.gallery_of[fast.path[k]] != fast.path[k - 1])
          return std::string("gallery_of is not the path parent");
    }
    return std::string();
  });

  add("hardness.distill_oracle", [] {
    Rng rng(42);
    std::vector<double> s(6), t(6);
    for (int i = 0; i < 6; ++i) {
      s[i] = rng.gaussian();
      t[i] = rng.gaussian();
    }
    double T = 3.0;
    double got = distill_loss(s, t, DistillKind::kKl, T);
    std::vector<double> ps = softmax(s, T), pt = softmax(t, T);
    double oracle = 0.0;
    for (int i = 0; i < 6; ++i)
      oracle += pt[i] * (std::log(pt[i]) - std::log(ps[i]));
    oracle *= T * T;
    if (!close(got, oracle, 1e-9)) return failf("kl %g != oracle %g", got, oracle);
    if (distill_loss(s, s, DistillKind::kKl, T) > 1e-12 ||
        distill_loss(s, s, DistillKind::kMse, T) > 1e-12)
      return std::string("identical tensors should give zero loss");
    if (!close(distill_loss({0.0, 0.0}, {1.0, 1.0}, DistillKind::kMse, 1.0),
               1.0, 1e-12))
      return std::string("mse([0,0],[1,1]) != 1");
    return std::string();
  });

  add("cgr.alpha_oracle", [] {
    Rng rng(51);
    MixedPair pair;
    pair.x_q = random_feat(4, 3, 3, rng);
    pair.x_g = random_feat(4, 3, 3, rng);
    pair.mask_cells.resize(9);
    for (auto& m : pair.mask_cells) m = rng.below(2);
    PatchConfidence a = patch_confidence(pair);
    for (int j = 0; j < 9; ++j) {
      double aq = 0.0, ag = 0.0;
      for (int k = 0; k < 9; ++k) {
        if (k == j) continue;
        double dq = 0.0, dg = 0.0;
        for (int i = 0; i < 4; ++i) {
          dq += pair.x_q.cell(k)[i] * pair.x_q.cell(j)[i];
          dg += pair.x_g.cell(k)[i] * pair.x_g.cell(j)[i];
        }
        if (pair.mask_cells[k] == 0) aq += dq;
        if (pair.mask_cells[k] == 1) ag += dg;
      }
      if (!close(a.alpha_q[j], aq, 1e-10) || !close(a.alpha_g[j], ag, 1e-10))
        return std::string("alpha mismatch vs double-loop oracle");
    }
    return std::string();
  });

  add("cgr.gumbel_frequency", [] {
    Rng rng(52);
    std::vector<double> aq = {0.7, 0.0}, ag = {0.1, 0.0};
    double T = 0.8;
    int picks[2] = {0, 0};
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
      SelectionWeights w = normalize_select(aq, ag, T, rng, true);
      for (int j = 0; j < 2; ++j) {
        if (w.ahat_q[j] + w.ahat_g[j] != 1.0)
          return std::string("hard weights not one-hot");
        picks[j] += w.ahat_q[j] == 1.0;
      }
    }
    for (int j = 0; j < 2; ++j) {
      double expect = 1.0 / (1.0 + std::exp(-(aq[j] - ag[j]) / T));
      double got = static_cast<double>(picks[j]) / draws;
      if (!close(got, expect, 0.02))
        return failf("pick frequency %g vs softmax %g", got, expect);
    }
    return std::string();
  });

  add("cgr.hard_merge_purity", [] {
    Rng rng(53);
    MixedPair pair;
    pair.x_q = random_feat(5, 2, 2, rng);
    pair.x_g = random_feat(5, 2, 2, rng);
    pair.mask_cells = {0, 1, 1, 0};
    PatchConfidence a = patch_confidence(pair);
    SelectionWeights w = normalize_select(a.alpha_q, a.alpha_g, 1.0, rng, true);
    FeatureMap m = merge(pair, w);
    for (int j = 0; j < 4; ++j) {
      const double* src = w.ahat_q[j] == 1.0 ? pair.x_q.cell(j) : pair.x_g.cell(j);
      for (int i = 0; i < 5; ++i)
        if (std::memcmp(&m.cell(j)[i], &src[i], sizeof(double)) != 0)
          return std::string("merged column is not a byte copy");
    }
    SelectionWeights ones = w;
    std::fill(ones.ahat_q.begin(), ones.ahat_q.end(), 1.0);
    std::fill(ones.ahat_g.begin(), ones.ahat_g.end(), 0.0);
    FeatureMap mq = merge(pair, ones);
    if (mq.data != pair.x_q.data) return std::string("all-(1,0) merge != x_q");
    return std::string();
  });

  add("cgr.oracle_selection_recovers_query", [] {
    Rng rng(54);
    NetShape shape;
    shape.channels = 1;
    shape.height = 8;
    shape.width = 8;
    shape.grid_h = 4;
    shape.grid_w = 4;
    shape.d_hidden = 6;
    shape.feat_dim = 5;
    shape.n_base = 3;
    Model model = init_model(shape, rng);
    TensorF32 q = random_image(1, 8, 8, rng);
    TensorF32 g = random_image(1, 8, 8, rng);
    // a patch-aligned box: exact recovery only holds when no feature cell
    // straddles the box boundary
    auto [mixed, spec] = patchmix_with_lambda(q, g, 0, 1, 4, 4, 0.75, rng);
    (void)mixed;
    spec.box.w1 = 4; spec.box.w2 = 7; spec.box.h1 = 0; spec.box.h2 = 3;
    TensorF32 mixed_aligned = q;
    for (int y = spec.box.h1; y <= spec.box.h2; ++y)
      for (int x = spec.box.w1; x <= spec.box.w2; ++x)
        mixed_aligned[static_cast<size_t>(y) * 8 + x] =
            g[static_cast<size_t>(y) * 8 + x];
    TensorF32 mixed2 = std::move(mixed_aligned);
    TensorF32 comp = mix_complement(q, g, spec);
    MixedPair pair;
    pair.x_q = forward_backbone(model, mixed2);
    pair.x_g = forward_backbone(model, comp);
    pair.mask_cells = cell_mask(spec.box, 8, 8, 4, 4);
    SelectionWeights w;
    w.hard = true;
    w.temperature = 1.0;
    for (uint8_t mc : pair.mask_cells) {
      w.ahat_q.push_back(mc ? 0.0 : 1.0);
      w.ahat_g.push_back(mc ? 1.0 : 0.0);
      w.soft_q.push_back(mc ? 0.0 : 1.0);
      w.soft_g.push_back(mc ? 1.0 : 0.0);
    }
    FeatureMap merged = merge(pair, w);
    FeatureMap direct = forward_backbone(model, q);
    for (size_t i = 0; i < merged.data.size(); ++i)
      if (!close(merged.data[i], direct.data[i], 1e-12))
        return std::string("oracle selection did not recover the query layout");
    if (selection_loss(w, pair.mask_cells) > 1e-9)
      return std::string("perfect selection should zero the selection loss");
    return std::string();
  });

  add("unsup.moco_oracle", [] {
    Rng rng(61);
    const int b = 5, c = 7;
    std::vector<std::vector<double>> q(b, std::vector<double>(c));
    std::vector<std::vector<double>> k(b, std::vector<double>(c));
    for (auto& v : q)
      for (double& x : v) x = rng.gaussian();
    for (auto& v : k)
      for (double& x : v) x = rng.gaussian();
    double T = 0.5;
    double got = moco_loss(q, k, T);
    double oracle = 0.0;
    for (int i = 0; i < b; ++i) {
      std::vector<double> logits(b);
      for (int j = 0; j < b; ++j) {
        double d = 0.0, nq = 0.0, nk = 0.0;
        for (int x = 0; x < c; ++x) {
          d += q[i][x] * k[j][x];
          nq += q[i][x] * q[i][x];
          nk += k[j][x] * k[j][x];
        }
        logits[j] = d / (std::sqrt(nq) * std::sqrt(nk)) / T;
      }
      double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double l : logits) z += std::exp(l - mx);
      oracle -= logits[i] - mx - std::log(z);
    }
    if (!close(got, oracle, 1e-9)) return failf("moco %g != oracle %g", got, oracle);
    if (moco_loss({{1.0, 2.0}}, {{1.0, 2.0}}, 1.0) != 0.0)
      return std::string("single-pair batch should give exactly zero");
    return std::string();
  });

  add("unsup.mask_identities", [] {
    Rng rng(62);
    const int b = 3;
    std::vector<FeatureMap> qm;
    std::vector<std::vector<double>> keys(b, std::vector<double>(4));
    for (int i = 0; i < b; ++i) {
      qm.push_back(random_feat(4, 2, 2, rng));
      for (double& x : keys[i]) x = rng.gaussian();
    }
    std::vector<std::vector<uint8_t>> ones(b, std::vector<uint8_t>(4, 1));
    std::vector<std::vector<uint8_t>> zeros(b, std::vector<uint8_t>(4, 0));
    double dl = dense_loss(qm, keys, 0.3);
    double pl = patchmoco_loss(qm, keys, 0.3, ones);
    if (std::memcmp(&dl, &pl, sizeof(double)) != 0)
      return std::string("all-ones mask is not bitwise equal to dense loss");
    if (patchmoco_loss(qm, keys, 0.3, zeros) != 0.0)
      return std::string("all-zeros mask should give exactly 0");
    std::vector<std::vector<uint8_t>> ma(b, std::vector<uint8_t>(4, 0));
    std::vector<std::vector<uint8_t>> mb(b, std::vector<uint8_t>(4, 0));
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < 4; ++j) ((i + j) % 2 ? ma : mb)[i][j] = 1;
    double split_sum = patchmoco_loss(qm, keys, 0.3, ma) +
                       patchmoco_loss(qm, keys, 0.3, mb);
    if (!close(split_sum, dl, 1e-9))
      return std::string("disjoint masks do not add to the dense loss");
    return std::string();
  });

  add("unsup.kmeans", [] {
    Rng rng(63);
    std::vector<std::vector<double>> pts;
    std::vector<int> truth;
    for (int i = 0; i < 400; ++i) {
      int blob = i % 2;
      pts.push_back({blob * 12.0 + rng.gaussian(), rng.gaussian()});
      truth.push_back(blob);
    }
    KmeansResult res = kmeans(pts, 2, rng);
    for (size_t i = 1; i < res.inertia_trace.size(); ++i)
      if (res.inertia_trace[i] > res.inertia_trace[i - 1] + 1e-9)
        return std::string("inertia increased across Lloyd iterations");
    int agree = 0;
    for (size_t i = 0; i < pts.size(); ++i)
      agree += (res.assign[i] == res.assign[truth[i]]);  // label-permutation safe
    int match = 0;
    for (size_t i = 0; i < pts.size(); ++i)
      match += (res.assign[i] == truth[i]);
    int acc = std::max(match, static_cast<int>(pts.size()) - match);
    if (acc != static_cast<int>(pts.size()))
      return failf("blob recovery %g/%g imperfect", acc, (double)pts.size());
    (void)agree;
    return std::string();
  });

  add("metrics.ci95_closed_form", [] {
    std::vector<double> accs = {0.2, 0.4, 0.6, 0.8, 1.0, 0.0, 0.5, 0.3};
    EvalReport r = report_from_accuracies(accs);
    double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
    double ss = 0.0;
    for (double a : accs) ss += (a - mean) * (a - mean);
    double ci = 1.96 * std::sqrt(ss / (accs.size() - 1)) /
                std::sqrt(static_cast<double>(accs.size()));
    if (!close(r.ci95, ci, 1e-12)) return failf("ci %g != closed form %g", r.ci95, ci);
    return std::string();
  });

  add("metrics.intra_variance_oracle", [] {
    std::vector<std::vector<double>> f = {{1.0, 0.0}, {-1.0, 0.0},
                                          {5.0, 2.0}, {5.0, -2.0}};
    std::vector<int> y = {0, 0, 1, 1};
    // two points at +/-v around each mean: iv = |v|^2
    double got = intra_variance(f, y);
    if (!close(got, (1.0 + 4.0) / 2.0, 1e-12))
      return failf("iv %g != %g", got, 2.5);
    Rng rng(64);
    std::vector<std::vector<double>> rf;
    std::vector<int> ry;
    for (int i = 0; i < 60; ++i) {
      rf.push_back({rng.gaussian(), rng.gaussian(), rng.gaussian()});
      ry.push_back(static_cast<int>(rng.below(3)));
    }
    std::map<int, std::vector<size_t>> by;
    for (size_t i = 0; i < ry.size(); ++i) by[ry[i]].push_back(i);
    double oracle = 0.0;
    for (auto& [cls, idx] : by) {
      std::vector<double> mean(3, 0.0);
      for (size_t i : idx)
        for (int k = 0; k < 3; ++k) mean[k] += rf[i][k];
      for (double& v : mean) v /= idx.size();
      double var = 0.0;
      for (size_t i : idx)
        for (int k = 0; k < 3; ++k)
          var += (rf[i][k] - mean[k]) * (rf[i][k] - mean[k]);
      oracle += var / idx.size();
    }
    oracle /= by.size();
    if (!close(intra_variance(rf, ry), oracle, 1e-10))
      return std::string("iv mismatch vs two-pass oracle");
    return std::string();
  });

  add("metrics.probe_sanity", [] {
    Rng rng(65);
    std::vector<std::vector<double>> onehot, noise;
    std::vector<int> z;
    for (int i = 0; i < 200; ++i) {
      int comp = static_cast<int>(rng.below(2));
      z.push_back(comp);
      onehot.push_back({comp == 0 ? 1.0 : 0.0, comp == 1 ? 1.0 : 0.0});
      noise.push_back({rng.gaussian(), rng.gaussian()});
    }
    double acc_hot = spurious_probe(onehot, z);
    if (acc_hot < 0.95) return failf("one-hot probe acc %g < %g", acc_hot, 0.95);
    double acc_noise = spurious_probe(noise, z);
    if (std::fabs(acc_noise - 0.5) > 0.15)
      return failf("noise probe acc %g not near chance %g", acc_noise, 0.5);
    return std::string();
  });

  add("datasets.episode_invariants", [] {
    Rng rng(71);
    LabeledDataset ds;
    ds.n_classes = 8;
    for (int i = 0; i < 96; ++i) {
      ds.images.push_back(TensorF32({1, 4, 4}, static_cast<float>(i)));
      ds.labels.push_back(i % 8);
    }
    for (int trial = 0; trial < 200; ++trial) {
      Episode ep = sample_episode(ds, 5, 2, 3, rng);
      std::set<size_t> support(ep.support_idx.begin(), ep.support_idx.end());
      for (size_t idx : ep.query_idx)
        if (support.count(idx)) return std::string("support/query overlap");
      std::set<int> classes(ep.class_map.begin(), ep.class_map.end());
      if (classes.size() != 5) return std::string("class_map not a bijection");
    }
    return std::string();
  });

  add("datasets.scm_acceptance_rule", [] {
    ScmConfig cfg;
    cfg.rho = 0.9;
    Rng rng(72);
    ScmData data = generate_scm(cfg, 10000, 10, rng);
    int match = 0;
    for (const ScmSample& s : data.train_samples)
      match += (s.z_component == scm_partner(cfg, s.y));
    double got = static_cast<double>(match) / data.train_samples.size();
    // closed form of the acceptance rule with two z components
    double expect = cfg.rho;
    if (!close(got, expect, 0.02))
      return failf("P(match|C=1) %g vs closed form %g", got, expect);
    int tmatch = 0;
    for (const ScmSample& s : data.test_samples)
      tmatch += (s.z_component == scm_partner(cfg, s.y));
    (void)tmatch;
    return std::string();
  });

  add("datasets.scm_render_inversion", [] {
    ScmConfig cfg;
    Rng rng(73);
    ScmData data = generate_scm(cfg, 4, 4, rng);
    // least-squares invert the fixed render maps on one sample
    const ScmSample& s = data.train_samples[0];
    const TensorF32& img = data.train.images[0];
    auto solve_ls = [](const std::vector<float>& a, int rows, int cols,
                       const std::vector<double>& b) {
      std::vector<double> ata(static_cast<size_t>(cols) * cols, 0.0);
      std::vector<double> atb(cols, 0.0);
      for (int r = 0; r < rows; ++r)
        for (int i = 0; i < cols; ++i) {
          double ari = a[static_cast<size_t>(r) * cols + i];
          atb[i] += ari * b[r];
          for (int j = 0; j <= i; ++j)
            ata[static_cast<size_t>(i) * cols + j] +=
                ari * a[static_cast<size_t>(r) * cols + j];
        }
      for (int i = 0; i < cols; ++i)
        for (int j = i + 1; j < cols; ++j)
          ata[static_cast<size_t>(i) * cols + j] =
              ata[static_cast<size_t>(j) * cols + i];
      // plain Gaussian elimination, SPD and tiny
      std::vector<double> x = atb;
      for (int i = 0; i < cols; ++i) {
        double piv = ata[static_cast<size_t>(i) * cols + i];
        for (int j = i + 1; j < cols; ++j) {
          double f = ata[static_cast<size_t>(j) * cols + i] / piv;
          for (int k = i; k < cols; ++k)
            ata[static_cast<size_t>(j) * cols + k] -=
                f * ata[static_cast<size_t>(i) * cols + k];
          x[j] -= f * x[i];
        }
      }
      for (int i = cols - 1; i >= 0; --i) {
        for (int j = i + 1; j < cols; ++j)
          x[i] -= ata[static_cast<size_t>(i) * cols + j] * x[j];
        x[i] /= ata[static_cast<size_t>(i) * cols + i];
      }
      return x;
    };
    const ScmRender& rd = data.render;
    std::vector<double> spix(rd.s_pixels), zpix(rd.z_pixels);
    for (int p = 0; p < rd.s_pixels; ++p) spix[p] = img[rd.s_pixel_index[p]];
    for (int p = 0; p < rd.z_pixels; ++p) zpix[p] = img[rd.z_pixel_index[p]];
    auto s_rec = solve_ls(rd.s_map, rd.s_pixels, cfg.dim_s_eff(), spix);
    auto z_rec = solve_ls(rd.z_map, rd.z_pixels, cfg.dim_z, zpix);
    for (int i = 0; i < cfg.dim_s_eff(); ++i)
      if (std::fabs(s_rec[i] - s.s[i]) > 3.0 * cfg.noise_sigma)
        return failf("s coord %g vs %g beyond 3 sigma", s_rec[i], s.s[i]);
    for (int i = 0; i < cfg.dim_z; ++i)
      if (std::fabs(z_rec[i] - s.z[i]) > 3.0 * cfg.noise_sigma)
        return failf("z coord %g vs %g beyond 3 sigma", z_rec[i], s.z[i]);
    return std::string();
  });

  add("nets.patch_locality", [] {
    Rng rng(81);
    NetShape shape;
    shape.channels = 2;
    shape.height = 8;
    shape.width = 8;
    shape.grid_h = 4;
    shape.grid_w = 4;
    shape.d_hidden = 5;
    shape.feat_dim = 4;
    shape.n_base = 3;
    Model m = init_model(shape, rng);
    TensorF32 img = random_image(2, 8, 8, rng);
    FeatureMap base = forward_backbone(m, img);
    TensorF32 z = img;
    // zero out patch (1,2)
    for (int c = 0; c < 2; ++c)
      for (int y = 2; y < 4; ++y)
        for (int x = 4; x < 6; ++x)
          z[(static_cast<size_t>(c) * 8 + y) * 8 + x] = 0.0f;
    FeatureMap changed = forward_backbone(m, z);
    int diff_cells = 0;
    for (int cell = 0; cell < 16; ++cell) {
      bool diff = false;
      for (int i = 0; i < 4; ++i)
        if (base.cell(cell)[i] != changed.cell(cell)[i]) diff = true;
      diff_cells += diff;
    }
    if (diff_cells != 1) return failf("%g cells changed, expected %g", diff_cells, 1);
    // zero image with zero biases gives a zero map (elu(0) = 0)
    Model zm = m;
    std::fill(zm.backbone.b1.vec().begin(), zm.backbone.b1.vec().end(), 0.f);
    std::fill(zm.backbone.b2.vec().begin(), zm.backbone.b2.vec().end(), 0.f);
    FeatureMap zf = forward_backbone(zm, TensorF32({2, 8, 8}, 0.0f));
    for (double v : zf.data)
      if (v != 0.0) return std::string("zero image did not map to zero features");
    return std::string();
  });

  add("nets.momentum_contract", [] {
    Rng rng(82);
    NetShape shape;
    shape.height = 4;
    shape.width = 4;
    shape.grid_h = 2;
    shape.grid_w = 2;
    shape.d_hidden = 3;
    shape.feat_dim = 3;
    shape.n_base = 2;
    Model query = init_model(shape, rng);
    Rng key_rng = rng.split();
    Model key = init_model(shape, key_rng);
    double m = 0.9;
    double d0 = 0.0;
    auto qp = param_list(query);
    auto kp = param_list(key);
    for (size_t i = 0; i < qp.size(); ++i)
      for (size_t j = 0; j < qp[i]->numel(); ++j) {
        double d = (*kp[i])[j] - (*qp[i])[j];
        d0 += d * d;
      }
    const int u = 5;
    for (int t = 0; t < u; ++t) momentum_update(key, query, m);
    double du = 0.0;
    for (size_t i = 0; i < qp.size(); ++i)
      for (size_t j = 0; j < qp[i]->numel(); ++j) {
        double d = (*kp[i])[j] - (*qp[i])[j];
        du += d * d;
      }
    double expect = std::sqrt(d0) * std::pow(m, u);
    if (!close(std::sqrt(du), expect, 1e-5 * expect))
      return failf("gap %g vs m^u prediction %g", std::sqrt(du), expect);
    return std::string();
  });

  add("grad.episode_fd", [] {
    TinyWorld w = tiny_world(901, true, "patchmix");
    double err = fd_max_rel_err(w, nullptr, 555);
    if (err >= 1e-3) return failf("patchmix+cgr fd rel err %g >= %g", err, 1e-3);
    TinyWorld w2 = tiny_world(902, false, "none");
    double err2 = fd_max_rel_err(w2, nullptr, 556);
    if (err2 >= 1e-3) return failf("baseline fd rel err %g >= %g", err2, 1e-3);
    return std::string();
  });

  add("grad.stage2_fd", [] {
    TinyWorld w = tiny_world(903, false, "patchmix");
    TinyWorld t = tiny_world(904, false, "patchmix");
    w.cfg.distill = "kl";
    double err = fd_max_rel_err(w, &t.model, 557);
    if (err >= 1e-3) return failf("stage2 fd rel err %g >= %g", err, 1e-3);
    return std::string();
  });

  add("determinism.episode_replay", [] {
    TinyWorld w = tiny_world(905, true, "patchmix");
    AugmentKind aug = augment_kind(w.cfg.augment);
    double a = episode_forward_backward(w.model, w.cfg, w.ds, w.ep, aug,
                                        nullptr, Rng(99), nullptr)
                   .total;
    double b = episode_forward_backward(w.model, w.cfg, w.ds, w.ep, aug,
                                        nullptr, Rng(99), nullptr)
                   .total;
    if (std::memcmp(&a, &b, sizeof(double)) != 0)
      return std::string("replayed episode loss is not bit-identical");
    return std::string();
  });

  return checks;
}

}  // namespace

bool run_selftest(std::ostream& out) {
  auto checks = build_checks();
  int failed = 0;
  for (const Check& c : checks) {
    std::string err = c.run();
    if (err.empty()) {
      out << "[PASS] " << c.name << "\n";
    } else {
      out << "[FAIL] " << c.name << ": " << err << "\n";
      ++failed;
    }
  }
  out << (failed == 0 ? "selftest: all " : "selftest: FAILED ")
      << checks.size() - failed << "/" << checks.size() << " checks passed\n";
  return failed == 0;
}

}  // namespace patchmix
