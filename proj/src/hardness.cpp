#include "patchmix/hardness.hpp"

#include <algorithm>
#include <cmath>

namespace patchmix {

SimilarityGraph class_similarity(const Prototypes& protos) {
  SimilarityGraph g;
  g.n = protos.way;
  g.sim.assign(static_cast<size_t>(g.n) * g.n, 0.0);
  const int c = protos.feat_dim;
  std::vector<double> norms(g.n);
  for (int i = 0; i < g.n; ++i) {
    const double* p = protos.row(i);
    double n2 = 0.0;
    for (int k = 0; k < c; ++k) n2 += p[k] * p[k];
    norms[i] = std::sqrt(n2);
    if (norms[i] == 0.0)
      throw DegenerateInputError("class_similarity: zero-norm prototype");
  }
  for (int i = 0; i < g.n; ++i) {
    g.sim[static_cast<size_t>(i) * g.n + i] = 1.0;
    for (int j = i + 1; j < g.n; ++j) {
      double d = 0.0;
      const double* pi = protos.row(i);
      const double* pj = protos.row(j);
      for (int k = 0; k < c; ++k) d += pi[k] * pj[k];
      double s = d / (norms[i] * norms[j]);
      g.sim[static_cast<size_t>(i) * g.n + j] = s;
      g.sim[static_cast<size_t>(j) * g.n + i] = s;
    }
  }
  return g;
}

namespace {

void finish_assignment(TspAssignment& a, const SimilarityGraph& graph) {
  const int n = graph.n;
  a.gallery_of.assign(n, -1);
  for (int k = 1; k < n; ++k) a.gallery_of[a.path[k]] = a.path[k - 1];
  a.gallery_of[a.path[0]] = a.path[1];
  a.cost = 0.0;
  for (int k = 1; k < n; ++k) a.cost += -graph.at(a.path[k - 1], a.path[k]);
}

}  // namespace

TspAssignment tsp_hardest_path(const SimilarityGraph& graph, int start) {
  const int n = graph.n;
  if (n < 2) throw ArgumentError("tsp: need at least two classes");
  if (n > 12) throw CapacityError("tsp: exact solver capped at 12 classes");
  if (start < 0 || start >= n) throw ArgumentError("tsp: bad start node");

  // remaining nodes, re-indexed without the start
  std::vector<int> others;
  for (int i = 0; i < n; ++i)
    if (i != start) others.push_back(i);
  const int m = static_cast<int>(others.size());
  const uint32_t full = (1u << m) - 1u;

  auto edge = [&graph](int a, int b) { return -graph.at(a, b); };

  // h[S][j]: min cost to visit set S starting from node j (j = m means start)
  std::vector<std::vector<double>> h(full + 1,
                                     std::vector<double>(m + 1, 0.0));
  for (uint32_t set = 1; set <= full; ++set) {
    for (int j = 0; j <= m; ++j) {
      int from = (j == m) ? start : others[j];
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < m; ++k) {
        if (!(set & (1u << k))) continue;
        double cand = edge(from, others[k]) + h[set & ~(1u << k)][k];
        if (cand < best) best = cand;
      }
      h[set][j] = best;
    }
  }

  // greedy reconstruction: smallest next node that still completes optimally
  TspAssignment a;
  a.path.push_back(start);
  uint32_t remaining = full;
  int cur = m;  // start
  while (remaining != 0) {
    int from = (cur == m) ? start : others[cur];
    double target = h[remaining][cur];
    int chosen = -1;
    for (int k = 0; k < m; ++k) {
      if (!(remaining & (1u << k))) continue;
      double cand = edge(from, others[k]) + h[remaining & ~(1u << k)][k];
      if (cand == target) {
        chosen = k;
        break;  // others[] is sorted, so the first hit is the smallest node
      }
    }
    if (chosen < 0) throw StateError("tsp: reconstruction failed");
    a.path.push_back(others[chosen]);
    remaining &= ~(1u << chosen);
    cur = chosen;
  }
  finish_assignment(a, graph);
  return a;
}

TspAssignment tsp_brute_force(const SimilarityGraph& graph, int start) {
  const int n = graph.n;
  if (n < 2) throw ArgumentError("tsp: need at least two classes");
  std::vector<int> others;
  for (int i = 0; i < n; ++i)
    if (i != start) others.push_back(i);
  std::sort(others.begin(), others.end());

  TspAssignment best;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double cost = -graph.at(start, others[0]);
    for (size_t k = 1; k < others.size(); ++k)
      cost += -graph.at(others[k - 1], others[k]);
    if (cost < best_cost) {
      best_cost = cost;
      best.path.assign(1, start);
      best.path.insert(best.path.end(), others.begin(), others.end());
    }
  } while (std::next_permutation(others.begin(), others.end()));
  finish_assignment(best, graph);
  return best;
}

double distill_loss(const std::vector<double>& student,
                    const std::vector<double>& teacher, DistillKind kind,
                    double T, std::vector<double>* dstudent) {
  if (student.size() != teacher.size())
    throw ArgumentError("distill_loss: shape mismatch");
  if (student.empty()) throw ArgumentError("distill_loss: empty input");
  const size_t n = student.size();
  if (dstudent) dstudent->assign(n, 0.0);

  if (kind == DistillKind::kMse) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double d = student[i] - teacher[i];
      acc += d * d;
      if (dstudent) (*dstudent)[i] = 2.0 * d / static_cast<double>(n);
    }
    return acc / static_cast<double>(n);
  }

  if (!(T > 0.0)) throw ArgumentError("distill_loss: kl needs T > 0");
  std::vector<double> ps = softmax(student, T);
  std::vector<double> pt = softmax(teacher, T);
  double kl = 0.0;
  for (size_t i = 0; i < n; ++i)
    if (pt[i] > 0.0)
      kl += pt[i] * (std::log(pt[i]) - std::log(std::max(ps[i], 1e-300)));
  if (dstudent)
    for (size_t i = 0; i < n; ++i) (*dstudent)[i] = T * (ps[i] - pt[i]);
  return T * T * kl;
}

double stage2_loss(double base_loss, double kd_loss) {
  return base_loss + kd_loss;
}

}  // namespace patchmix
