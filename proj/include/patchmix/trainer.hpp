// Two-stage episodic training loop, evaluation adapters, the synthetic SCM
// experiment, and the unsupervised pipeline. The CLI commands are thin
// wrappers over these entry points.
#pragma once

#include <optional>
#include <utility>
#include <string>
#include <vector>

#include "patchmix/config.hpp"
#include "patchmix/datasets.hpp"
#include "patchmix/metrics.hpp"
#include "patchmix/nets.hpp"

namespace patchmix {

enum class AugmentKind { kNone, kMixup, kCutmix, kPatchmix };
AugmentKind augment_kind(const std::string& name);

struct DataBundle {
  LabeledDataset train;
  LabeledDataset test;
  bool has_scm = false;
  ScmConfig scm;
  std::vector<ScmSample> train_samples;
  std::vector<ScmSample> test_samples;
};

DataBundle load_data(const RunConfig& cfg, Rng& rng);
NetShape shape_from(const RunConfig& cfg, const LabeledDataset& ds);

struct StepStats {
  double total = 0.0;
  double lf = 0.0, lg = 0.0;
  double lsel = 0.0, lrec = 0.0;
  double lkd = 0.0;
};

// Loss forward (+ backward when `grads` is given) for one episode. The Rng
// is taken by value so the same draws can be replayed, which is what the
// finite-difference gradient checks rely on. `teacher` enables the stage-2
// hardness-aware path (TSP galleries and distillation).
StepStats episode_forward_backward(const Model& model, const RunConfig& cfg,
                                   const LabeledDataset& ds, const Episode& ep,
                                   AugmentKind aug, const Model* teacher,
                                   Rng rng, GradBuffer* grads,
                                   std::vector<std::pair<int, int>>* mix_audit = nullptr);

// One full training step: forward, backward, SGD update.
StepStats episode_step(Model& model, SgdState& sgd, const RunConfig& cfg,
                       const LabeledDataset& ds, const Episode& ep,
                       AugmentKind aug, const Model* teacher, double lr,
                       Rng& rng);

struct TrainOutput {
  Model model;
  std::vector<IvTraceRow> iv_rows;
};

// Stage-1 training (optionally appending intra-variance rows per epoch).
TrainOutput train_stage1(const RunConfig& cfg, const DataBundle& data,
                         AugmentKind aug, bool with_cgr, Rng& rng,
                         int first_epoch = 1);
// Stage-2: student starts from the teacher weights; the teacher stays frozen.
TrainOutput train_stage2(const RunConfig& cfg, const DataBundle& data,
                         const Model& teacher, Rng& rng, int first_epoch);

// Episode predictor backed by a model: prototypes from supports, then
// spatially averaged confidence argmax. Never touches the global classifier.
EpisodePredictor model_predictor(const Model& model);

// Pooled backbone features for a whole dataset.
std::vector<std::vector<double>> pooled_features(const Model& model,
                                                 const LabeledDataset& ds);

// ------------------------------------------------------------- commands

int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_scm_experiment(const RunConfig& cfg);
int cmd_unsup(const RunConfig& cfg);
int cmd_generate_scm(const RunConfig& cfg);

}  // namespace patchmix
