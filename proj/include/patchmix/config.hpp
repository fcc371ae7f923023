// Run configuration: a line-oriented `key = value` file with CLI overrides.
// Every field has a default; unknown keys are rejected.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchmix/datasets.hpp"

namespace patchmix {

struct RunConfig {
  // run
  uint64_t seed = 1;
  std::string out_dir = "runs/out";

  // data: synthetic SCM by default, manifests when given
  bool use_scm = true;
  double scm_rho = 0.9;
  int scm_classes = 5;
  int scm_novel = 5;
  int scm_dim_s = 0;  // 0 = one-hot over all classes
  int scm_dim_z = 2;
  int scm_grid = 8;
  int scm_image = 32;
  double scm_sigma = 0.1;
  double scm_scale = 3.0;
  double scm_z_scale = 0.0;  // 0 = scm_scale
  int scm_train = 600;
  int scm_test = 500;
  std::string train_manifest;
  std::string test_manifest;

  // episodes
  int way = 5;
  int shot = 1;
  int queries = 3;

  // model
  int feat_dim = 32;
  int hidden = 64;
  int grid = 8;  // feature grid; image dims must be divisible by it

  // training
  int epochs1 = 25;
  int epochs2 = 10;
  int episodes_per_epoch = 40;
  double lr = 0.15;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  double logit_scale = 10.0;
  std::string augment = "patchmix";  // none | mixup | cutmix | patchmix
  bool cgr = true;
  double cgr_temperature = 1.0;
  bool cgr_hard = true;
  double lambda_sel = 0.5;   // weight of the selection loss
  double lambda_rec = 0.25;  // weight of the reconstruction loss
  std::string distill = "auto";  // auto | mse | kl
  double distill_temperature = 4.0;
  bool iv_trace = true;
  int iv_repeats = 20;
  int iv_novel_way = 5;

  // evaluation
  int eval_episodes = 2000;
  int exp_eval_episodes = 400;  // novel accuracy inside scm-experiment
  std::string checkpoint;

  // unsupervised pipeline
  int pretrain_epochs = 10;
  int pretrain_batches = 20;  // batches per pretrain epoch
  int batch = 16;
  double moco_temperature = 0.2;
  double momentum_m = 0.99;
  int key_bank = 1024;
  int clusters = 0;  // 0 = number of base classes
  int partitions = 1;

  void validate() const;
  ScmConfig scm_config() const;
};

// Parse `key = value` lines; '#' starts a comment.
RunConfig load_config(const std::string& path);
// Apply "key=value" override tokens in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);
// Apply one override.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);
// Keys mirrored by the `--scm rho=...,classes=...` CLI shorthand.
void apply_scm_shorthand(RunConfig& cfg, const std::string& spec);
// Names of all known keys (documentation, error messages).
std::vector<std::string> config_keys();

}  // namespace patchmix
