#include "patchmix/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace patchmix {

EvalReport report_from_accuracies(const std::vector<double>& accuracies) {
  if (accuracies.empty()) throw ArgumentError("evaluate: no episodes");
  EvalReport r;
  r.per_episode = accuracies;
  r.n_episodes = static_cast<int>(accuracies.size());
  double s = 0.0;
  for (double a : accuracies) s += a;
  r.mean_accuracy = s / r.n_episodes;
  if (r.n_episodes > 1) {
    double ss = 0.0;
    for (double a : accuracies) {
      double d = a - r.mean_accuracy;
      ss += d * d;
    }
    double stddev = std::sqrt(ss / (r.n_episodes - 1));
    r.ci95 = 1.96 * stddev / std::sqrt(static_cast<double>(r.n_episodes));
  }
  return r;
}

EvalReport evaluate(const EpisodePredictor& predictor, const LabeledDataset& ds,
                    int way, int shot, int queries, int n_episodes, Rng& rng) {
  if (n_episodes < 1) throw ArgumentError("evaluate: n_episodes must be positive");
  std::vector<double> accs;
  accs.reserve(n_episodes);
  for (int e = 0; e < n_episodes; ++e) {
    Episode ep = sample_episode(ds, way, shot, queries, rng);
    std::vector<int> pred = predictor(ds, ep);
    if (pred.size() != ep.query_idx.size())
      throw ArgumentError("evaluate: predictor returned wrong count");
    int correct = 0;
    for (size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == ep.query_label[i]) ++correct;
    accs.push_back(static_cast<double>(correct) / pred.size());
  }
  return report_from_accuracies(accs);
}

double intra_variance(const std::vector<std::vector<double>>& features,
                      const std::vector<int>& labels) {
  if (features.size() != labels.size())
    throw ArgumentError("intra_variance: feature/label count mismatch");
  if (features.empty()) throw ArgumentError("intra_variance: empty input");

  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  const size_t d = features[0].size();
  double total = 0.0;
  for (const auto& [cls, idx] : by_class) {
    std::vector<double> mean(d, 0.0);
    for (size_t i : idx)
      for (size_t k = 0; k < d; ++k) mean[k] += features[i][k];
    for (double& v : mean) v /= idx.size();
    double var = 0.0;
    for (size_t i : idx) {
      double sq = 0.0;
      for (size_t k = 0; k < d; ++k) {
        double diff = features[i][k] - mean[k];
        sq += diff * diff;
      }
      var += sq;
    }
    total += var / idx.size();
  }
  return total / by_class.size();
}

namespace {

// Solves A x = b for SPD A in place (Cholesky); A is n x n row-major.
void spd_solve(std::vector<double>& a, std::vector<std::vector<double>>& bs,
               int n) {
  // factor A = L L^T
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        s -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
      if (i == j) {
        if (s <= 0.0) throw NumericError("probe: ridge system not SPD");
        a[static_cast<size_t>(i) * n + j] = std::sqrt(s);
      } else {
        a[static_cast<size_t>(i) * n + j] = s / a[static_cast<size_t>(j) * n + j];
      }
    }
  }
  for (auto& b : bs) {
    for (int i = 0; i < n; ++i) {  // L y = b
      double s = b[i];
      for (int k = 0; k < i; ++k) s -= a[static_cast<size_t>(i) * n + k] * b[k];
      b[i] = s / a[static_cast<size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {  // L^T x = y
      double s = b[i];
      for (int k = i + 1; k < n; ++k)
        s -= a[static_cast<size_t>(k) * n + i] * b[k];
      b[i] = s / a[static_cast<size_t>(i) * n + i];
    }
  }
}

}  // namespace

double spurious_probe(const std::vector<std::vector<double>>& features,
                      const std::vector<int>& targets, double ridge_lambda) {
  if (features.size() != targets.size())
    throw ArgumentError("probe: feature/target count mismatch");
  if (features.size() < 4) throw ArgumentError("probe: too few samples");

  int n_classes = 0;
  for (int t : targets) {
    if (t < 0) throw ArgumentError("probe: negative target");
    n_classes = std::max(n_classes, t + 1);
  }
  const int d = static_cast<int>(features[0].size());
  const int da = d + 1;  // bias column

  // even indices fit the probe, odd indices score it
  std::vector<size_t> train_idx, eval_idx;
  for (size_t i = 0; i < features.size(); ++i)
    (i % 2 == 0 ? train_idx : eval_idx).push_back(i);

  std::vector<double> gram(static_cast<size_t>(da) * da, 0.0);
  std::vector<std::vector<double>> rhs(n_classes, std::vector<double>(da, 0.0));
  std::vector<double> x(da);
  for (size_t i : train_idx) {
    for (int k = 0; k < d; ++k) x[k] = features[i][k];
    x[d] = 1.0;
    for (int r = 0; r < da; ++r) {
      for (int c = 0; c <= r; ++c) gram[static_cast<size_t>(r) * da + c] += x[r] * x[c];
      rhs[targets[i]][r] += x[r];
    }
  }
  for (int r = 0; r < da; ++r) {
    for (int c = r + 1; c < da; ++c)
      gram[static_cast<size_t>(r) * da + c] = gram[static_cast<size_t>(c) * da + r];
    gram[static_cast<size_t>(r) * da + r] += ridge_lambda;
  }
  spd_solve(gram, rhs, da);  // rhs now holds one weight vector per class

  int correct = 0;
  for (size_t i : eval_idx) {
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int cls = 0; cls < n_classes; ++cls) {
      double s = rhs[cls][d];
      for (int k = 0; k < d; ++k) s += rhs[cls][k] * features[i][k];
      if (s > best_score) {
        best_score = s;
        best = cls;
      }
    }
    if (best == targets[i]) ++correct;
  }
  return static_cast<double>(correct) / eval_idx.size();
}

// ------------------------------------------------------------- csv output

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_eval_csv(const std::string& path, const EvalReport& report) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "episode,accuracy\n";
  for (size_t i = 0; i < report.per_episode.size(); ++i)
    f << i << ',' << fmt_double(report.per_episode[i]) << '\n';
}

void write_iv_trace(const std::string& path,
                    const std::vector<IvTraceRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "epoch,base_iv,novel_iv\n";
  for (const auto& r : rows)
    f << r.epoch << ',' << fmt_double(r.base_iv) << ','
      << fmt_double(r.novel_iv) << '\n';
}

void write_probe_csv(const std::string& path,
                     const std::vector<ProbeRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "method,probe_acc,novel_acc\n";
  for (const auto& r : rows)
    f << r.method << ',' << fmt_double(r.probe_acc) << ','
      << fmt_double(r.novel_acc) << '\n';
}

}  // namespace patchmix
