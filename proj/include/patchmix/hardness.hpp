// Stage-2 machinery: class-similarity graph over prototypes, an exact TSP
// path assigning each class its hardest gallery, and distillation losses.
#pragma once

#include <vector>

#include "patchmix/dproto.hpp"

namespace patchmix {

struct SimilarityGraph {
  int n = 0;
  std::vector<double> sim;  // n x n, symmetric, diagonal 1
  double at(int i, int j) const { return sim[static_cast<size_t>(i) * n + j]; }
};

struct TspAssignment {
  std::vector<int> path;        // permutation of 0..n-1, path[0] = start
  std::vector<int> gallery_of;  // gallery_of[path[k]] = path[k-1] for k >= 1;
                                // the start node borrows its successor path[1]
                                // so every class has a gallery
  double cost = 0.0;            // sum of -sim over consecutive pairs
};

// Pairwise prototype cosines.
SimilarityGraph class_similarity(const Prototypes& protos);

// Exact minimum-cost open path over all permutations fixing the start node
// (edge cost = -similarity), Held-Karp over subsets. Ties broken by the
// lexicographically smallest path. n > 12 is a capacity error.
TspAssignment tsp_hardest_path(const SimilarityGraph& graph, int start);

// Brute-force reference for tests: full permutation enumeration.
TspAssignment tsp_brute_force(const SimilarityGraph& graph, int start);

enum class DistillKind { kMse, kKl };

// mse: mean squared difference. kl: T^2 * KL(softmax(teacher/T) ||
// softmax(student/T)). `dstudent`, when given, receives the gradient.
double distill_loss(const std::vector<double>& student,
                    const std::vector<double>& teacher, DistillKind kind,
                    double T, std::vector<double>* dstudent = nullptr);

// L_ha = L + l_kd
double stage2_loss(double base_loss, double kd_loss);

}  // namespace patchmix
