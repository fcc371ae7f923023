#include "patchmix/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "patchmix/augment.hpp"
#include "patchmix/cgr.hpp"
#include "patchmix/dproto.hpp"
#include "patchmix/hardness.hpp"
#include "patchmix/unsup.hpp"

namespace patchmix {

namespace fs = std::filesystem;

AugmentKind augment_kind(const std::string& name) {
  if (name == "none") return AugmentKind::kNone;
  if (name == "mixup") return AugmentKind::kMixup;
  if (name == "cutmix") return AugmentKind::kCutmix;
  if (name == "patchmix") return AugmentKind::kPatchmix;
  throw ArgumentError("unknown augment kind: " + name);
}

DataBundle load_data(const RunConfig& cfg, Rng& rng) {
  DataBundle data;
  if (cfg.use_scm) {
    ScmData scm = generate_scm(cfg.scm_config(), cfg.scm_train, cfg.scm_test, rng);
    data.train = std::move(scm.train);
    data.test = std::move(scm.test);
    data.train_samples = std::move(scm.train_samples);
    data.test_samples = std::move(scm.test_samples);
    data.scm = cfg.scm_config();
    data.has_scm = true;
  } else {
    if (cfg.train_manifest.empty())
      throw ArgumentError("no train_manifest and use_scm = 0");
    data.train = load_dataset(cfg.train_manifest, Split::kBase);
    if (!cfg.test_manifest.empty())
      data.test = load_dataset(cfg.test_manifest, Split::kNovel);
  }
  return data;
}

NetShape shape_from(const RunConfig& cfg, const LabeledDataset& ds) {
  if (ds.images.empty()) throw ArgumentError("empty dataset");
  NetShape s;
  s.channels = static_cast<int>(ds.images[0].dim(0));
  s.height = static_cast<int>(ds.images[0].dim(1));
  s.width = static_cast<int>(ds.images[0].dim(2));
  s.grid_h = cfg.grid;
  s.grid_w = cfg.grid;
  s.d_hidden = cfg.hidden;
  s.feat_dim = cfg.feat_dim;
  s.n_base = ds.n_classes;
  s.validate();
  return s;
}

namespace {

DistillKind distill_kind(const RunConfig& cfg) {
  if (cfg.distill == "mse") return DistillKind::kMse;
  if (cfg.distill == "kl") return DistillKind::kKl;
  return cfg.shot == 1 ? DistillKind::kMse : DistillKind::kKl;
}

std::vector<double> pooled_conf_logits(const ConfidenceMap& conf,
                                       double scale) {
  std::vector<double> out(conf.way, 0.0);
  for (int i = 0; i < conf.way; ++i) {
    for (int cell = 0; cell < conf.cells(); ++cell) out[i] += conf.at(i, cell);
    out[i] = scale * out[i] / conf.cells();
  }
  return out;
}

}  // namespace

StepStats episode_forward_backward(const Model& model, const RunConfig& cfg,
                                   const LabeledDataset& ds, const Episode& ep,
                                   AugmentKind aug, const Model* teacher,
                                   Rng rng, GradBuffer* grads_out,
                                   std::vector<std::pair<int, int>>* mix_audit) {
  const NetShape& shape = model.shape;
  const int way = ep.way;
  const int nq = static_cast<int>(ep.query_idx.size());
  const double scale = cfg.logit_scale;
  const bool with_cgr = cfg.cgr && aug == AugmentKind::kPatchmix;
  const bool want_grads = grads_out != nullptr;

  GradBuffer local_grads(model);
  GradBuffer& grads = want_grads ? *grads_out : local_grads;
  StepStats stats;

  // support features (with caches: gradients flow through the prototypes)
  std::vector<FeatureMap> sup_feats(ep.support_idx.size());
  std::vector<BackboneCache> sup_caches(ep.support_idx.size());
  for (size_t j = 0; j < ep.support_idx.size(); ++j)
    sup_feats[j] = forward_backbone(model, ds.images[ep.support_idx[j]],
                                    &sup_caches[j]);
  Prototypes protos = prototypes(sup_feats, ep.support_label, way, ep.shot);
  std::vector<double> dprotos(protos.p.size(), 0.0);

  // stage 2: hardest-gallery assignment from the frozen teacher's prototypes
  std::vector<int> gallery_of;
  Prototypes teacher_protos;
  if (teacher) {
    std::vector<FeatureMap> tfeats(ep.support_idx.size());
    for (size_t j = 0; j < ep.support_idx.size(); ++j)
      tfeats[j] = forward_backbone(*teacher, ds.images[ep.support_idx[j]]);
    teacher_protos = prototypes(tfeats, ep.support_label, way, ep.shot);
    SimilarityGraph g = class_similarity(teacher_protos);
    int start = static_cast<int>(rng.below(way));
    gallery_of = tsp_hardest_path(g, start).gallery_of;
  }

  // queries of each episode class, for stage-2 gallery picks
  std::vector<std::vector<int>> queries_by_class(way);
  for (int q = 0; q < nq; ++q)
    queries_by_class[ep.query_label[q]].push_back(q);

  const double inv_nq = 1.0 / nq;
  for (int q = 0; q < nq; ++q) {
    const TensorF32& query_img = ds.images[ep.query_idx[q]];
    const int q_label = ep.query_label[q];

    // choose the gallery and build the training input
    TensorF32 input_img;
    MixSpec spec;
    std::vector<double> soft_episode;  // cutmix / mixup target
    int g_label = q_label;
    const TensorF32* gallery_img = nullptr;
    if (aug != AugmentKind::kNone) {
      int g_index;
      if (teacher && aug == AugmentKind::kPatchmix) {
        const auto& pool = queries_by_class[gallery_of[q_label]];
        g_index = pool[rng.below(pool.size())];
      } else {
        g_index = q;  // any other query of the episode
        while (nq > 1 && g_index == q)
          g_index = static_cast<int>(rng.below(nq));
      }
      gallery_img = &ds.images[ep.query_idx[g_index]];
      g_label = ep.query_label[g_index];
      if (mix_audit) mix_audit->emplace_back(q_label, g_label);
    }
    switch (aug) {
      case AugmentKind::kNone:
        input_img = query_img;
        break;
      case AugmentKind::kMixup: {
        auto [img, soft] = mixup(query_img, *gallery_img, q_label, g_label,
                                 way, rng);
        input_img = std::move(img);
        soft_episode = std::move(soft);
        break;
      }
      case AugmentKind::kCutmix: {
        auto [img, soft] = cutmix(query_img, *gallery_img, q_label, g_label,
                                  way, rng);
        input_img = std::move(img);
        soft_episode = std::move(soft);
        break;
      }
      case AugmentKind::kPatchmix: {
        auto [img, sp] = patchmix(query_img, *gallery_img, q_label, g_label,
                                  shape.grid_h, shape.grid_w, rng);
        input_img = std::move(img);
        spec = std::move(sp);
        break;
      }
    }

    BackboneCache qcache;
    FeatureMap qfeat = forward_backbone(model, input_img, &qcache);
    FeatureMap dqfeat(qfeat.feat_dim, qfeat.grid_h, qfeat.grid_w);
    ConfidenceMap conf = confidence_map(qfeat, protos);
    ConfidenceMap dconf;
    dconf.way = conf.way;
    dconf.grid_h = conf.grid_h;
    dconf.grid_w = conf.grid_w;
    dconf.map.assign(conf.map.size(), 0.0);

    // few-shot head
    if (aug == AugmentKind::kPatchmix || aug == AugmentKind::kNone) {
      std::vector<int> label_map =
          aug == AugmentKind::kPatchmix
              ? spec.label_map
              : std::vector<int>(static_cast<size_t>(conf.cells()), q_label);
      stats.lf += fewshot_loss(conf, label_map, scale) * inv_nq;
      ConfidenceMap dc = backward_fewshot(conf, label_map, scale);
      for (size_t i = 0; i < dconf.map.size(); ++i)
        dconf.map[i] += dc.map[i] * inv_nq;
    } else {
      ConfidenceMap dc;
      stats.lf += ce_pooled_conf(conf, soft_episode, scale, &dc) * inv_nq;
      for (size_t i = 0; i < dconf.map.size(); ++i)
        dconf.map[i] += dc.map[i] * inv_nq;
    }

    // global head: patch-level targets under patchmix, image-level otherwise
    std::vector<double> logits = forward_gc(model, qfeat);
    std::vector<double> dlogits;
    if (aug == AugmentKind::kPatchmix) {
      std::vector<int> base_targets(spec.label_map.size());
      for (size_t i = 0; i < spec.label_map.size(); ++i)
        base_targets[i] = ep.class_map[spec.label_map[i]];
      stats.lg += ce_per_cell(logits, shape.n_base, base_targets, &dlogits) *
                  inv_nq;
    } else {
      std::vector<double> base_target(shape.n_base, 0.0);
      if (aug == AugmentKind::kNone) {
        base_target[ep.class_map[q_label]] = 1.0;
      } else {
        for (int e = 0; e < way; ++e)
          base_target[ep.class_map[e]] += soft_episode[e];
      }
      stats.lg += ce_pooled(logits, shape.n_base, base_target, &dlogits) *
                  inv_nq;
    }
    for (double& v : dlogits) v *= 0.5 * inv_nq;  // L = lf + 0.5*lg
    backward_gc(model, qfeat, dlogits, grads, dqfeat);

    // stage-2 distillation on the spatially averaged confidence logits
    if (teacher) {
      FeatureMap tq = forward_backbone(*teacher, input_img);
      ConfidenceMap tconf = confidence_map(tq, teacher_protos);
      std::vector<double> t_logits = pooled_conf_logits(tconf, scale);
      std::vector<double> s_logits = pooled_conf_logits(conf, scale);
      std::vector<double> ds_logits;
      stats.lkd += distill_loss(s_logits, t_logits, distill_kind(cfg),
                                cfg.distill_temperature, &ds_logits) *
                   inv_nq;
      for (int i = 0; i < conf.way; ++i) {
        double g = ds_logits[i] * scale / conf.cells() * inv_nq;
        for (int cell = 0; cell < conf.cells(); ++cell)
          dconf.map[static_cast<size_t>(i) * conf.cells() + cell] += g;
      }
    }

    backward_confidence(qfeat, protos, dconf, dqfeat, dprotos);

    // correlation-guided reconstruction on the mixed pair
    if (with_cgr) {
      MixedPair pair;
      pair.x_q = qfeat;
      TensorF32 comp_img = mix_complement(query_img, *gallery_img, spec);
      BackboneCache gcache;
      pair.x_g = forward_backbone(model, comp_img, &gcache);
      pair.mask_cells = cell_mask(spec.box, shape.width, shape.height,
                                  shape.grid_h, shape.grid_w);

      PatchConfidence alpha = patch_confidence(pair);
      SelectionWeights w = normalize_select(alpha.alpha_q, alpha.alpha_g,
                                            cfg.cgr_temperature, rng,
                                            cfg.cgr_hard);
      FeatureMap merged_q = merge(pair, w);
      FeatureMap merged_g = merge_gallery(pair, w);
      DecoderCache dc_q, dc_g;
      std::vector<double> recon_q = forward_decoder(model, merged_q, &dc_q);
      std::vector<double> recon_g = forward_decoder(model, merged_g, &dc_g);

      double lsel = selection_loss(w, pair.mask_cells);
      double lrec = mae(recon_q, query_img) + mae(recon_g, *gallery_img);
      stats.lsel += lsel * inv_nq;
      stats.lrec += lrec * inv_nq;

      // reconstruction branch
      std::vector<double> dimg_q = backward_mae(recon_q, query_img);
      std::vector<double> dimg_g = backward_mae(recon_g, *gallery_img);
      double wrec = cfg.lambda_rec * inv_nq;
      for (double& v : dimg_q) v *= wrec;
      for (double& v : dimg_g) v *= wrec;
      FeatureMap dmerged_q(qfeat.feat_dim, qfeat.grid_h, qfeat.grid_w);
      FeatureMap dmerged_g(qfeat.feat_dim, qfeat.grid_h, qfeat.grid_w);
      backward_decoder(model, dc_q, dimg_q, grads, dmerged_q);
      backward_decoder(model, dc_g, dimg_g, grads, dmerged_g);

      // selection branch
      std::vector<double> dsoft = backward_selection_loss(w, pair.mask_cells);
      double wsel = cfg.lambda_sel * inv_nq;
      for (double& v : dsoft) v *= wsel;

      FeatureMap dxg(qfeat.feat_dim, qfeat.grid_h, qfeat.grid_w);
      backward_merge(pair, w, dmerged_q, dmerged_g, dqfeat, dxg, dsoft);
      std::vector<double> dalpha_q, dalpha_g;
      backward_select(w, dsoft, dalpha_q, dalpha_g);
      backward_patch_confidence(pair, dalpha_q, dalpha_g, dqfeat, dxg);
      backward_backbone(model, gcache, dxg, grads);
    }

    backward_backbone(model, qcache, dqfeat, grads);
  }

  // prototype gradients flow into the support features
  std::vector<FeatureMap> dsup(sup_feats.size());
  for (size_t j = 0; j < sup_feats.size(); ++j)
    dsup[j] = FeatureMap(shape.feat_dim, shape.grid_h, shape.grid_w);
  backward_prototypes(dprotos, ep.support_label, way, ep.shot, dsup);
  for (size_t j = 0; j < sup_feats.size(); ++j)
    backward_backbone(model, sup_caches[j], dsup[j], grads);

  stats.total = total_loss(stats.lf, stats.lg) + cfg.lambda_sel * stats.lsel +
                cfg.lambda_rec * stats.lrec + stats.lkd;
  if (!std::isfinite(stats.total) || !grads.all_finite())
    throw NumericError("training step produced a non-finite loss or gradient");
  return stats;
}

StepStats episode_step(Model& model, SgdState& sgd, const RunConfig& cfg,
                       const LabeledDataset& ds, const Episode& ep,
                       AugmentKind aug, const Model* teacher, double lr,
                       Rng& rng) {
  Rng step_rng = rng.split();
  GradBuffer grads(model);
  StepStats stats = episode_forward_backward(model, cfg, ds, ep, aug, teacher,
                                             step_rng, &grads);
  sgd_step(model, grads, sgd, lr, cfg.weight_decay, cfg.momentum);
  return stats;
}

// ----------------------------------------------------------- iv tracking

namespace {

std::vector<std::vector<double>> pooled_features_impl(const Model& model,
                                                      const LabeledDataset& ds) {
  std::vector<std::vector<double>> out;
  out.reserve(ds.size());
  for (const TensorF32& img : ds.images)
    out.push_back(forward_backbone(model, img).pooled());
  return out;
}

IvTraceRow iv_row(const RunConfig& cfg, const Model& model,
                  const DataBundle& data, int epoch, Rng& iv_rng) {
  IvTraceRow row;
  row.epoch = epoch;
  auto base_feats = pooled_features_impl(model, data.train);
  row.base_iv = intra_variance(base_feats, data.train.labels);

  if (data.test.size() > 0) {
    auto novel_feats = pooled_features_impl(model, data.test);
    std::set<int> class_set(data.test.labels.begin(), data.test.labels.end());
    std::vector<int> classes(class_set.begin(), class_set.end());
    int pick = std::min<int>(cfg.iv_novel_way, static_cast<int>(classes.size()));
    double acc = 0.0;
    for (int r = 0; r < cfg.iv_repeats; ++r) {
      std::vector<int> pool = classes;
      iv_rng.shuffle(pool);
      std::set<int> chosen(pool.begin(), pool.begin() + pick);
      std::vector<std::vector<double>> feats;
      std::vector<int> labels;
      for (size_t i = 0; i < novel_feats.size(); ++i)
        if (chosen.count(data.test.labels[i])) {
          feats.push_back(novel_feats[i]);
          labels.push_back(data.test.labels[i]);
        }
      acc += intra_variance(feats, labels);
    }
    row.novel_iv = acc / cfg.iv_repeats;
  }
  return row;
}

TrainOutput train_loop(const RunConfig& cfg, const DataBundle& data,
                       AugmentKind aug, bool with_cgr, const Model* teacher,
                       Model start_model, int epochs, Rng& rng,
                       int first_epoch) {
  RunConfig local = cfg;
  local.cgr = with_cgr && cfg.cgr;
  TrainOutput out;
  out.model = std::move(start_model);
  SgdState sgd(out.model);
  Rng iv_rng = rng.split();
  Rng train_rng = rng.split();

  const int total_steps = epochs * cfg.episodes_per_epoch;
  int step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    StepStats epoch_stats;
    for (int e = 0; e < cfg.episodes_per_epoch; ++e, ++step) {
      Episode ep = sample_episode(data.train, cfg.way, cfg.shot, cfg.queries,
                                  train_rng);
      double lr = cosine_lr(cfg.lr, step, total_steps);
      StepStats s = episode_step(out.model, sgd, local, data.train, ep, aug,
                                 teacher, lr, train_rng);
      epoch_stats.total += s.total;
      epoch_stats.lf += s.lf;
      epoch_stats.lg += s.lg;
      epoch_stats.lsel += s.lsel;
      epoch_stats.lrec += s.lrec;
      epoch_stats.lkd += s.lkd;
    }
    if (cfg.iv_trace)
      out.iv_rows.push_back(
          iv_row(cfg, out.model, data, first_epoch + epoch, iv_rng));
    std::cerr << "epoch " << (first_epoch + epoch) << " loss "
              << epoch_stats.total / cfg.episodes_per_epoch << "\n";
  }
  return out;
}

}  // namespace

TrainOutput train_stage1(const RunConfig& cfg, const DataBundle& data,
                         AugmentKind aug, bool with_cgr, Rng& rng,
                         int first_epoch) {
  Rng init_rng = rng.split();
  Model model = init_model(shape_from(cfg, data.train), init_rng);
  return train_loop(cfg, data, aug, with_cgr, nullptr, std::move(model),
                    cfg.epochs1, rng, first_epoch);
}

TrainOutput train_stage2(const RunConfig& cfg, const DataBundle& data,
                         const Model& teacher, Rng& rng, int first_epoch) {
  return train_loop(cfg, data, AugmentKind::kPatchmix, cfg.cgr, &teacher,
                    teacher, cfg.epochs2, rng, first_epoch);
}

EpisodePredictor model_predictor(const Model& model) {
  const Model* m = &model;
  return [m](const LabeledDataset& ds, const Episode& ep) {
    std::vector<FeatureMap> sup(ep.support_idx.size());
    for (size_t j = 0; j < ep.support_idx.size(); ++j)
      sup[j] = forward_backbone(*m, ds.images[ep.support_idx[j]]);
    Prototypes protos = prototypes(sup, ep.support_label, ep.way, ep.shot);
    std::vector<int> preds;
    preds.reserve(ep.query_idx.size());
    for (size_t q = 0; q < ep.query_idx.size(); ++q) {
      FeatureMap f = forward_backbone(*m, ds.images[ep.query_idx[q]]);
      preds.push_back(predict(confidence_map(f, protos)).first);
    }
    return preds;
  };
}

std::vector<std::vector<double>> pooled_features(const Model& model,
                                                 const LabeledDataset& ds) {
  return pooled_features_impl(model, ds);
}

// --------------------------------------------------------------- commands

namespace {

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  return std::string(std::istreambuf_iterator<char>(f),
                     std::istreambuf_iterator<char>());
}

}  // namespace

int cmd_train(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  Rng root(cfg.seed);
  Rng data_rng = root.split();
  Rng stage1_rng = root.split();
  Rng stage2_rng = root.split();
  DataBundle data = load_data(cfg, data_rng);

  AugmentKind aug = augment_kind(cfg.augment);
  TrainOutput s1 = train_stage1(cfg, data, aug, cfg.cgr, stage1_rng, 1);
  std::string stage1_path = (fs::path(cfg.out_dir) / "stage1.ckpt").string();
  save_checkpoint(stage1_path, s1.model);

  std::vector<IvTraceRow> iv_rows = s1.iv_rows;
  Model final_model = s1.model;
  if (cfg.epochs2 > 0 && aug == AugmentKind::kPatchmix) {
    std::string before = read_file_bytes(stage1_path);
    TrainOutput s2 =
        train_stage2(cfg, data, s1.model, stage2_rng, cfg.epochs1 + 1);
    iv_rows.insert(iv_rows.end(), s2.iv_rows.begin(), s2.iv_rows.end());
    final_model = s2.model;
    // the frozen teacher must be untouched by stage 2
    std::string teacher_now =
        (fs::path(cfg.out_dir) / ".teacher_check.ckpt").string();
    save_checkpoint(teacher_now, s1.model);
    if (read_file_bytes(teacher_now) != before)
      throw StateError("stage 2 mutated the teacher parameters");
    fs::remove(teacher_now);
  }
  save_checkpoint((fs::path(cfg.out_dir) / "final.ckpt").string(), final_model);
  if (cfg.iv_trace)
    write_iv_trace((fs::path(cfg.out_dir) / "iv_trace.csv").string(), iv_rows);
  std::cout << "trained " << cfg.augment << " model -> " << cfg.out_dir
            << "/final.ckpt\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.checkpoint.empty())
    throw ArgumentError("eval: checkpoint= path required");
  fs::create_directories(cfg.out_dir);
  Model model = load_checkpoint(cfg.checkpoint);
  Rng root(cfg.seed);
  Rng data_rng = root.split();
  Rng eval_rng = root.split();
  DataBundle data = load_data(cfg, data_rng);
  const LabeledDataset& ds = data.test.size() > 0 ? data.test : data.train;
  EvalReport report = evaluate(model_predictor(model), ds, cfg.way, cfg.shot,
                               cfg.queries, cfg.eval_episodes, eval_rng);
  write_eval_csv((fs::path(cfg.out_dir) / "eval.csv").string(), report);
  std::cout << "accuracy " << fmt_double(report.mean_accuracy) << " +/- "
            << fmt_double(report.ci95) << " over " << report.n_episodes
            << " episodes\n";
  return 0;
}

int cmd_scm_experiment(const RunConfig& cfg) {
  cfg.validate();
  if (!cfg.use_scm)
    throw ArgumentError("scm-experiment requires use_scm = 1");
  fs::create_directories(cfg.out_dir);

  std::vector<ProbeRow> rows;
  const char* methods[] = {"baseline", "mixup", "cutmix", "patchmix"};
  for (const char* method : methods) {
    // identical data, init, and stream layout per leg; only the
    // augmentation differs
    Rng root(cfg.seed);
    Rng data_rng = root.split();
    Rng train_rng = root.split();
    Rng eval_rng = root.split();
    DataBundle data = load_data(cfg, data_rng);

    RunConfig leg = cfg;
    leg.cgr = false;  // isolate the augmentation
    AugmentKind kind = std::string(method) == "baseline"
                           ? AugmentKind::kNone
                           : augment_kind(method);
    TrainOutput out = train_stage1(leg, data, kind, false, train_rng, 1);
    write_iv_trace((fs::path(cfg.out_dir) /
                    ("iv_trace_" + std::string(method) + ".csv"))
                       .string(),
                   out.iv_rows);
    save_checkpoint(
        (fs::path(cfg.out_dir) / ("ckpt_" + std::string(method) + ".ckpt"))
            .string(),
        out.model);

    auto feats = pooled_features(out.model, data.test);
    std::vector<int> z_targets;
    z_targets.reserve(data.test_samples.size());
    for (const ScmSample& s : data.test_samples)
      z_targets.push_back(s.z_component);
    ProbeRow row;
    row.method = method;
    row.probe_acc = spurious_probe(feats, z_targets);
    row.novel_acc = evaluate(model_predictor(out.model), data.test, cfg.way,
                             cfg.shot, cfg.queries, cfg.exp_eval_episodes,
                             eval_rng)
                        .mean_accuracy;
    rows.push_back(row);
    std::cout << method << " probe " << fmt_double(row.probe_acc) << " novel "
              << fmt_double(row.novel_acc) << "\n";
  }
  write_probe_csv((fs::path(cfg.out_dir) / "probe.csv").string(), rows);
  return 0;
}

int cmd_generate_scm(const RunConfig& cfg) {
  cfg.validate();
  if (!cfg.use_scm)
    throw ArgumentError("generate-scm requires use_scm = 1");
  Rng root(cfg.seed);
  Rng data_rng = root.split();
  DataBundle data = load_data(cfg, data_rng);
  save_dataset(data.train, (fs::path(cfg.out_dir) / "train").string(),
               "manifest.tsv");
  save_dataset(data.test, (fs::path(cfg.out_dir) / "test").string(),
               "manifest.tsv");
  std::ofstream meta(fs::path(cfg.out_dir) / "meta.csv");
  if (!meta) throw IoError("cannot write meta.csv");
  meta << "split,index,y,z_component,c\n";
  for (const ScmSample& s : data.train_samples)
    meta << "train," << s.image_index << ',' << s.y << ',' << s.z_component
         << ',' << s.c << '\n';
  for (const ScmSample& s : data.test_samples)
    meta << "test," << s.image_index << ',' << s.y << ',' << s.z_component
         << ',' << s.c << '\n';
  std::cout << "wrote scm dataset -> " << cfg.out_dir << "\n";
  return 0;
}

int cmd_unsup(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  Rng root(cfg.seed);
  Rng data_rng = root.split();
  Rng pre_rng = root.split();
  Rng cluster_rng = root.split();
  Rng train_rng = root.split();
  DataBundle data = load_data(cfg, data_rng);
  const LabeledDataset& train = data.train;
  NetShape shape = shape_from(cfg, train);

  // ---- PatchMoCo pretraining on unlabeled images
  Rng init_rng = pre_rng.split();
  Model query_model = init_model(shape, init_rng);
  Model key_model = query_model;
  SgdState sgd(query_model);
  KeyBank bank(static_cast<size_t>(cfg.key_bank));

  auto make_view = [&shape](const TensorF32& img, Rng& r) {
    TensorF32 v = img;
    if (r.below(2) == 1) {  // horizontal flip
      for (int c = 0; c < shape.channels; ++c)
        for (int y = 0; y < shape.height; ++y)
          for (int x = 0; x < shape.width / 2; ++x) {
            size_t a = (static_cast<size_t>(c) * shape.height + y) * shape.width + x;
            size_t b = (static_cast<size_t>(c) * shape.height + y) * shape.width +
                       (shape.width - 1 - x);
            std::swap(v[a], v[b]);
          }
    }
    for (size_t i = 0; i < v.numel(); ++i)
      v[i] = static_cast<float>(v[i] + 0.05 * r.gaussian());
    return v;
  };

  const int total_steps = cfg.pretrain_epochs * cfg.pretrain_batches;
  int step = 0;
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int b = 0; b < cfg.pretrain_batches; ++b, ++step) {
      std::vector<size_t> idx(cfg.batch);
      for (int i = 0; i < cfg.batch; ++i) idx[i] = pre_rng.below(train.size());

      std::vector<std::vector<double>> keys(cfg.batch);
      std::vector<TensorF32> qviews(cfg.batch);
      for (int i = 0; i < cfg.batch; ++i) {
        TensorF32 kview = make_view(train.images[idx[i]], pre_rng);
        keys[i] = forward_backbone(key_model, kview).pooled();
        qviews[i] = make_view(train.images[idx[i]], pre_rng);
      }
      // patch-mix the query views inside the batch; switched cells drop out
      std::vector<TensorF32> mixed(cfg.batch);
      std::vector<std::vector<uint8_t>> masks(cfg.batch);
      for (int i = 0; i < cfg.batch; ++i) {
        int partner = i;
        while (cfg.batch > 1 && partner == i)
          partner = static_cast<int>(pre_rng.below(cfg.batch));
        auto [img, spec] = patchmix(qviews[i], qviews[partner], 0, 1,
                                    shape.grid_h, shape.grid_w, pre_rng);
        mixed[i] = std::move(img);
        auto cells = cell_mask(spec.box, shape.width, shape.height,
                               shape.grid_h, shape.grid_w);
        masks[i].resize(cells.size());
        for (size_t j = 0; j < cells.size(); ++j) masks[i][j] = cells[j] ? 0 : 1;
      }

      std::vector<FeatureMap> qmaps(cfg.batch);
      std::vector<BackboneCache> caches(cfg.batch);
      for (int i = 0; i < cfg.batch; ++i)
        qmaps[i] = forward_backbone(query_model, mixed[i], &caches[i]);

      std::vector<FeatureMap> dq;
      double loss = patchmoco_loss(qmaps, keys, cfg.moco_temperature, masks,
                                   bank.keys(), &dq);
      ensure_finite(loss, "patchmoco loss");
      epoch_loss += loss;

      GradBuffer grads(query_model);
      for (int i = 0; i < cfg.batch; ++i)
        backward_backbone(query_model, caches[i], dq[i], grads);
      double lr = cosine_lr(cfg.lr, step, total_steps);
      sgd_step(query_model, grads, sgd, lr, cfg.weight_decay, cfg.momentum);
      momentum_update(key_model, query_model, cfg.momentum_m);
      for (int i = 0; i < cfg.batch; ++i) bank.push(std::move(keys[i]));
    }
    std::cerr << "pretrain epoch " << (epoch + 1) << " loss "
              << epoch_loss / cfg.pretrain_batches << "\n";
  }
  save_checkpoint((fs::path(cfg.out_dir) / "pretrain.ckpt").string(),
                  query_model);

  // ---- k-means pseudo-labels over pooled features
  auto feats = pooled_features(query_model, train);
  std::set<int> base_classes(train.labels.begin(), train.labels.end());
  int k = cfg.clusters > 0 ? cfg.clusters
                           : static_cast<int>(base_classes.size());
  auto partitions = kmeans_pseudolabels(feats, k, cfg.partitions, cluster_rng);
  {
    std::ofstream f(fs::path(cfg.out_dir) / "pseudo_labels.csv");
    if (!f) throw IoError("cannot write pseudo_labels.csv");
    f << "image_index,partition,cluster\n";
    for (size_t p = 0; p < partitions.size(); ++p)
      for (size_t i = 0; i < partitions[p].size(); ++i)
        f << i << ',' << p << ',' << partitions[p][i] << '\n';
  }

  // ---- supervised PatchMix pipeline on the pseudo-labeled data
  DataBundle pseudo = data;
  pseudo.train.labels = partitions[0];
  pseudo.train.n_classes = k;
  pseudo.train.validate();
  TrainOutput s1 = train_stage1(cfg, pseudo, AugmentKind::kPatchmix, cfg.cgr,
                                train_rng, 1);
  Model final_model = s1.model;
  if (cfg.epochs2 > 0) {
    TrainOutput s2 =
        train_stage2(cfg, pseudo, s1.model, train_rng, cfg.epochs1 + 1);
    final_model = s2.model;
  }
  save_checkpoint((fs::path(cfg.out_dir) / "final.ckpt").string(), final_model);
  std::cout << "unsupervised pipeline complete -> " << cfg.out_dir
            << "/final.ckpt\n";
  return 0;
}

}  // namespace patchmix
