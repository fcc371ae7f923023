// Episode accuracy with 95% confidence intervals, within-class feature
// variance tracking, and the linear probe that quantifies how much of the
// nuisance variable is decodable from frozen features.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "patchmix/datasets.hpp"
#include "patchmix/tensor.hpp"

namespace patchmix {

struct EvalReport {
  int n_episodes = 0;
  double mean_accuracy = 0.0;
  double ci95 = 0.0;  // 1.96 * sample std / sqrt(n)
  std::vector<double> per_episode;
};

// Predicts an episode label for every query in the episode.
using EpisodePredictor =
    std::function<std::vector<int>(const LabeledDataset&, const Episode&)>;

EvalReport evaluate(const EpisodePredictor& predictor, const LabeledDataset& ds,
                    int way, int shot, int queries, int n_episodes, Rng& rng);

// Mean/ci aggregation alone, for synthetic accuracy lists.
EvalReport report_from_accuracies(const std::vector<double>& accuracies);

// Mean over classes of the mean squared distance of each class's feature
// vectors to their class mean.
double intra_variance(const std::vector<std::vector<double>>& features,
                      const std::vector<int>& labels);

// One-vs-rest ridge classifier fit on the even-indexed samples, accuracy
// reported on the odd-indexed ones.
double spurious_probe(const std::vector<std::vector<double>>& features,
                      const std::vector<int>& targets,
                      double ridge_lambda = 1e-3);

// ------------------------------------------------------------ csv output

void write_eval_csv(const std::string& path, const EvalReport& report);

struct IvTraceRow {
  int epoch = 0;
  double base_iv = 0.0;
  double novel_iv = 0.0;
};
void write_iv_trace(const std::string& path, const std::vector<IvTraceRow>& rows);

struct ProbeRow {
  std::string method;
  double probe_acc = 0.0;
  double novel_acc = 0.0;
};
void write_probe_csv(const std::string& path, const std::vector<ProbeRow>& rows);

// Deterministic float formatting shared by all CSV writers.
std::string fmt_double(double v);

}  // namespace patchmix
