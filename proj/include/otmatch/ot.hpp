#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "otmatch/autodiff.hpp"
#include "otmatch/matrix.hpp"

namespace otmatch {

struct SinkhornConfig {
  double epsilon = 0.05;       // entropic regularization, > 0
  std::size_t max_iters = 200; // full row+column sweeps
  double marginal_tol = 1e-6;  // max absolute marginal violation
};

// Pairwise 1 - cosine similarity; entries clamped into [0, 2].
// A zero-norm row on either side is scored as cosine 0 (cost 1) against
// every counterpart and flagged, instead of producing NaN.
struct CostMatrix {
  Matrix values;  // n x m
  bool had_zero_norm = false;
};

struct TransportPlan {
  Matrix flow;                        // n x m, nonnegative
  std::vector<double> row_marginals;  // u
  std::vector<double> col_marginals;  // v
  double cost = 0.0;                  // sum c_ij x_ij
  std::size_t iterations = 0;
  bool converged = true;
  double marginal_violation = 0.0;  // max abs violation of either side
};

CostMatrix cosine_cost(const Matrix& parts, const Matrix& words);

// u_i = 1/n, v_j = 1/m.
std::pair<std::vector<double>, std::vector<double>> uniform_marginals(
    std::size_t n, std::size_t m);

// Log-domain Sinkhorn on the kernel exp(-c/epsilon). Alternates row and
// column potential updates until the marginal violation drops below
// marginal_tol or max_iters is reached; non-convergence only clears the
// converged flag. The returned flow gets one exact row rescaling so row
// marginals hold to rounding even on early exit.
TransportPlan sinkhorn(const Matrix& cost, const std::vector<double>& u,
                       const std::vector<double>& v,
                       const SinkhornConfig& cfg);

// R = -sum c_ij x_ij with x from sinkhorn on uniform marginals; always
// in [-2, 0].
double emd_similarity(const Matrix& parts, const Matrix& words,
                      const SinkhornConfig& cfg,
                      TransportPlan* plan_out = nullptr);

// Nearest-neighbour hard matching baseline:
// R = -1/2 [ (1/n) sum_i min_j c_ij + (1/m) sum_j min_i c_ij ].
double chamfer_similarity(const Matrix& parts, const Matrix& words);

// Exact optimum of the transportation LP by enumerating spanning-tree
// bases of the complete bipartite graph; every vertex of the polytope is
// visited, so the result is exact. Restricted to n*m <= 25.
double exact_emd_oracle(const Matrix& cost, const std::vector<double>& u,
                        const std::vector<double>& v);

// Gradients of R w.r.t. both embedding sets. The entropic plan is a
// smooth function of the cost matrix, so the plan's response is
// differentiated through the converged fixed point (a small adjoint
// solve over the potentials) and chained through the cosine cost.
struct EmdGradient {
  Matrix d_parts;
  Matrix d_words;
};
EmdGradient emd_gradient(const Matrix& parts, const Matrix& words,
                         const SinkhornConfig& cfg, double upstream);

// Tape ops for training. emd_score backpropagates through the plan's
// fixed point; chamfer_score treats the selected nearest neighbours as
// constant, which is exact away from selection ties.
Tape::Id emd_score(Tape& t, Tape::Id parts, Tape::Id words,
                   const SinkhornConfig& cfg,
                   TransportPlan* plan_out = nullptr);
Tape::Id chamfer_score(Tape& t, Tape::Id parts, Tape::Id words);

}  // namespace otmatch
