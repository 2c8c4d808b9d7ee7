#include "otmatch/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace otmatch {

namespace {

std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> out(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    const double* row = m.row_ptr(i);
    for (std::size_t j = 0; j < m.cols; ++j) s += row[j] * row[j];
    out[i] = std::sqrt(s);
  }
  return out;
}

void check_marginals(const Matrix& cost, const std::vector<double>& u,
                     const std::vector<double>& v) {
  if (u.size() != cost.rows || v.size() != cost.cols)
    throw DimensionError("sinkhorn: marginal lengths " +
                         std::to_string(u.size()) + "/" +
                         std::to_string(v.size()) + " do not match cost " +
                         cost.shape_str());
  double su = 0.0, sv = 0.0;
  for (double x : u) {
    if (x <= 0.0) throw ConfigError("sinkhorn: row marginals must be positive");
    su += x;
  }
  for (double x : v) {
    if (x <= 0.0) throw ConfigError("sinkhorn: column marginals must be positive");
    sv += x;
  }
  if (std::fabs(su - 1.0) > 1e-9 || std::fabs(sv - 1.0) > 1e-9)
    throw ConfigError("sinkhorn: marginals must each sum to 1");
}

double logsumexp(const std::vector<double>& x) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace

CostMatrix cosine_cost(const Matrix& parts, const Matrix& words) {
  if (parts.cols != words.cols)
    throw DimensionError("cosine_cost: embedding widths differ: " +
                         parts.shape_str() + " vs " + words.shape_str());
  CostMatrix out;
  out.values = Matrix(parts.rows, words.rows);
  const std::vector<double> pn = row_norms(parts);
  const std::vector<double> wn = row_norms(words);
  for (double n : pn) out.had_zero_norm |= (n == 0.0);
  for (double n : wn) out.had_zero_norm |= (n == 0.0);

  for (std::size_t i = 0; i < parts.rows; ++i) {
    const double* p = parts.row_ptr(i);
    for (std::size_t j = 0; j < words.rows; ++j) {
      double cosine = 0.0;
      if (pn[i] != 0.0 && wn[j] != 0.0) {
        const double* w = words.row_ptr(j);
        double dot = 0.0;
        for (std::size_t k = 0; k < parts.cols; ++k) dot += p[k] * w[k];
        cosine = dot / (pn[i] * wn[j]);
      }
      out.values.at(i, j) = std::clamp(1.0 - cosine, 0.0, 2.0);
    }
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> uniform_marginals(
    std::size_t n, std::size_t m) {
  if (n < 1 || m < 1) throw DimensionError("uniform_marginals: empty side");
  return {std::vector<double>(n, 1.0 / static_cast<double>(n)),
          std::vector<double>(m, 1.0 / static_cast<double>(m))};
}

TransportPlan sinkhorn(const Matrix& cost, const std::vector<double>& u,
                       const std::vector<double>& v,
                       const SinkhornConfig& cfg) {
  if (cfg.epsilon <= 0.0) throw ConfigError("sinkhorn: epsilon must be > 0");
  if (cfg.max_iters < 1) throw ConfigError("sinkhorn: max_iters must be >= 1");
  check_marginals(cost, u, v);

  const std::size_t n = cost.rows, m = cost.cols;
  const double eps = cfg.epsilon;
  std::vector<double> f(n, 0.0), g(m, 0.0);
  std::vector<double> elog_u(n), elog_v(m);
  for (std::size_t i = 0; i < n; ++i) elog_u[i] = eps * std::log(u[i]);
  for (std::size_t j = 0; j < m; ++j) elog_v[j] = eps * std::log(v[j]);

  TransportPlan plan;
  plan.row_marginals = u;
  plan.col_marginals = v;

  std::vector<double> row_buf(m), col_buf(n);
  double row_violation = std::numeric_limits<double>::infinity();
  std::size_t iter = 0;
  for (; iter < cfg.max_iters; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j)
        row_buf[j] = (g[j] - cost.at(i, j)) / eps;
      f[i] = elog_u[i] - eps * logsumexp(row_buf);
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i)
        col_buf[i] = (f[i] - cost.at(i, j)) / eps;
      g[j] = elog_v[j] - eps * logsumexp(col_buf);
    }
    // Column marginals hold exactly after the g update; only the row
    // sums need checking.
    row_violation = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j)
        s += std::exp((f[i] + g[j] - cost.at(i, j)) / eps);
      row_violation = std::max(row_violation, std::fabs(s - u[i]));
    }
    if (row_violation <= cfg.marginal_tol) {
      ++iter;
      break;
    }
  }
  plan.iterations = iter;
  plan.converged = row_violation <= cfg.marginal_tol;

  plan.flow = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      plan.flow.at(i, j) = std::exp((f[i] + g[j] - cost.at(i, j)) / eps);

  // One exact row rescaling; keeps the plan feasible on the row side
  // even when the iteration budget ran out.
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += plan.flow.at(i, j);
    if (s > 0.0) {
      const double scale = u[i] / s;
      for (std::size_t j = 0; j < m; ++j) plan.flow.at(i, j) *= scale;
    }
  }

  double violation = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += plan.flow.at(i, j);
    violation = std::max(violation, std::fabs(s - u[i]));
  }
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += plan.flow.at(i, j);
    violation = std::max(violation, std::fabs(s - v[j]));
  }
  plan.marginal_violation = violation;

  plan.cost = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      plan.cost += cost.at(i, j) * plan.flow.at(i, j);
  return plan;
}

namespace {

// Solves the matcher problem once in one orientation. Transposing the
// cost transposes the plan, so callers can canonicalize the orientation.
TransportPlan solve_uniform(const Matrix& cost, const SinkhornConfig& cfg) {
  auto [u, v] = uniform_marginals(cost.rows, cost.cols);
  return sinkhorn(cost, u, v, cfg);
}

}  // namespace

double emd_similarity(const Matrix& parts, const Matrix& words,
                      const SinkhornConfig& cfg, TransportPlan* plan_out) {
  const CostMatrix c = cosine_cost(parts, words);
  // Canonical orientation: wider-than-tall, with a lexicographic rule
  // for square matrices, so (parts, words) and (words, parts) run the
  // identical iteration and the score is exactly swap-symmetric.
  bool flip = c.values.rows > c.values.cols;
  if (c.values.rows == c.values.cols) {
    const Matrix tr = transpose(c.values);
    flip = std::lexicographical_compare(tr.data.begin(), tr.data.end(),
                                        c.values.data.begin(),
                                        c.values.data.end());
  }
  TransportPlan plan;
  if (!flip) {
    plan = solve_uniform(c.values, cfg);
  } else {
    TransportPlan tp = solve_uniform(transpose(c.values), cfg);
    plan = tp;
    plan.flow = transpose(tp.flow);
    plan.row_marginals = tp.col_marginals;
    plan.col_marginals = tp.row_marginals;
  }
  const double r = std::clamp(-plan.cost, -2.0, 0.0);
  if (plan_out) *plan_out = std::move(plan);
  return r;
}

double chamfer_similarity(const Matrix& parts, const Matrix& words) {
  const CostMatrix c = cosine_cost(parts, words);
  const std::size_t n = c.values.rows, m = c.values.cols;
  double row_term = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mn = c.values.at(i, 0);
    for (std::size_t j = 1; j < m; ++j) mn = std::min(mn, c.values.at(i, j));
    row_term += mn;
  }
  double col_term = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double mn = c.values.at(0, j);
    for (std::size_t i = 1; i < n; ++i) mn = std::min(mn, c.values.at(i, j));
    col_term += mn;
  }
  const double r = -0.5 * (row_term / static_cast<double>(n) +
                           col_term / static_cast<double>(m));
  return std::clamp(r, -2.0, 0.0);
}

double exact_emd_oracle(const Matrix& cost, const std::vector<double>& u,
                        const std::vector<double>& v) {
  const std::size_t n = cost.rows, m = cost.cols;
  if (n * m > 25)
    throw ConfigError("exact_emd_oracle: instance " + cost.shape_str() +
                      " exceeds the n*m <= 25 cap");
  check_marginals(cost, u, v);

  const std::size_t cells = n * m;
  const std::size_t k = n + m - 1;  // edges of a spanning-tree basis

  // Enumerate every k-subset of cells; keep those forming a spanning
  // tree of the bipartite row/column graph, solve the unique basic
  // solution by leaf stripping, and keep the best feasible cost.
  std::vector<std::size_t> pick(k);
  std::iota(pick.begin(), pick.end(), 0);
  double best = std::numeric_limits<double>::infinity();

  std::vector<int> parent(n + m);
  std::vector<std::size_t> degree(n + m);
  std::vector<double> remaining(n + m);
  std::vector<std::size_t> adj_edge(n + m);  // last incident edge index

  const auto find_root = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };

  while (true) {
    // Spanning-tree test: k edges, no cycle over n+m vertices.
    bool tree = true;
    for (std::size_t x = 0; x < n + m; ++x) parent[x] = static_cast<int>(x);
    for (std::size_t e = 0; e < k && tree; ++e) {
      const int a = static_cast<int>(pick[e] / m);
      const int b = static_cast<int>(n + pick[e] % m);
      const int ra = find_root(a), rb = find_root(b);
      if (ra == rb)
        tree = false;
      else
        parent[ra] = rb;
    }
    if (tree) {
      // Leaf elimination. Each stripped leaf fixes the flow of its only
      // incident edge to the leaf's remaining supply/demand.
      std::fill(degree.begin(), degree.end(), 0);
      for (std::size_t i = 0; i < n; ++i) remaining[i] = u[i];
      for (std::size_t j = 0; j < m; ++j) remaining[n + j] = v[j];
      // Track incident edges with xor so a leaf's single edge pops out.
      std::fill(adj_edge.begin(), adj_edge.end(), 0);
      for (std::size_t e = 0; e < k; ++e) {
        const std::size_t a = pick[e] / m;
        const std::size_t b = n + pick[e] % m;
        ++degree[a];
        ++degree[b];
        adj_edge[a] ^= e + 1;
        adj_edge[b] ^= e + 1;
      }
      std::vector<std::size_t> leaves;
      leaves.reserve(n + m);
      for (std::size_t x = 0; x < n + m; ++x)
        if (degree[x] == 1) leaves.push_back(x);
      double total = 0.0;
      bool feasible = true;
      for (std::size_t processed = 0; processed < k && feasible;) {
        if (leaves.empty()) {
          feasible = false;
          break;
        }
        const std::size_t leaf = leaves.back();
        leaves.pop_back();
        if (degree[leaf] != 1) continue;
        const std::size_t e = adj_edge[leaf] - 1;
        const std::size_t a = pick[e] / m;
        const std::size_t b = n + pick[e] % m;
        const double flow = remaining[leaf];
        if (flow < -1e-10) {
          feasible = false;
          break;
        }
        total += std::max(flow, 0.0) * cost.at(pick[e] / m, pick[e] % m);
        const std::size_t other = (leaf == a) ? b : a;
        remaining[other] -= flow;
        remaining[leaf] = 0.0;
        --degree[leaf];
        --degree[other];
        adj_edge[leaf] ^= e + 1;
        adj_edge[other] ^= e + 1;
        ++processed;
        if (degree[other] == 1) leaves.push_back(other);
      }
      if (feasible) best = std::min(best, total);
    }

    // Next combination in lexicographic order.
    std::size_t i = k;
    while (i > 0 && pick[i - 1] == cells - k + i - 1) --i;
    if (i == 0) break;
    ++pick[i - 1];
    for (std::size_t j = i; j < k; ++j) pick[j] = pick[j - 1] + 1;
  }
  return best;
}

namespace {

// dR/dc for R = -<c, x(c)> with x the entropic plan. The plan is a
// smooth function of the cost through the converged potentials, so we
// differentiate through the fixed point instead of holding x constant:
// dx_ij = x_ij (df_i + dg_j - dc_ij)/eps with (df, dg) solving the
// linearized marginal conditions
//   [diag(u)  X ] [df]   [ (X o dc) 1 ]
//   [ X^T diag(v)] [dg] = [ (X o dc)^T 1 ].
// The adjoint of that system gives, with lambda solving
// [diag(u) X; X^T diag(v)] lambda = [q; p], q_i = sum_j c_ij x_ij,
// p_j = sum_i c_ij x_ij:
//   dR/dc_kl = -x_kl (1 - (c_kl - lambda_f[k] - lambda_g[l]) / eps).
// The matrix is a weakly dominant PSD system with the constant-shift
// nullspace; pinning the last potential makes it nonsingular.
Matrix emd_cost_gradient(const Matrix& c, const TransportPlan& plan,
                         double eps) {
  const std::size_t n = c.rows, m = c.cols;
  const Matrix& x = plan.flow;
  const std::size_t dim = n + m - 1;  // last column potential pinned to 0

  std::vector<double> q(n, 0.0), p(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      q[i] += c.at(i, j) * x.at(i, j);
      p[j] += c.at(i, j) * x.at(i, j);
    }

  // Dense assembly; matcher instances are tiny.
  Matrix a(dim, dim);
  std::vector<double> b(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    a.at(i, i) = plan.row_marginals[i];
    for (std::size_t j = 0; j + 1 < m; ++j) a.at(i, n + j) = x.at(i, j);
    b[i] = q[i];
  }
  for (std::size_t j = 0; j + 1 < m; ++j) {
    a.at(n + j, n + j) = plan.col_marginals[j];
    for (std::size_t i = 0; i < n; ++i) a.at(n + j, i) = x.at(i, j);
    b[n + j] = p[j];
  }

  // Gaussian elimination with partial pivoting.
  std::vector<std::size_t> perm(dim);
  for (std::size_t i = 0; i < dim; ++i) perm[i] = i;
  for (std::size_t col = 0; col < dim; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < dim; ++r)
      if (std::fabs(a.at(r, col)) > std::fabs(a.at(piv, col))) piv = r;
    if (piv != col) {
      for (std::size_t k = 0; k < dim; ++k)
        std::swap(a.at(col, k), a.at(piv, k));
      std::swap(b[col], b[piv]);
    }
    const double d = a.at(col, col);
    if (d == 0.0) continue;  // defective row; the solution stays bounded
    for (std::size_t r = col + 1; r < dim; ++r) {
      const double factor = a.at(r, col) / d;
      if (factor == 0.0) continue;
      for (std::size_t k = col; k < dim; ++k)
        a.at(r, k) -= factor * a.at(col, k);
      b[r] -= factor * b[col];
    }
  }
  std::vector<double> lambda(dim, 0.0);
  for (std::size_t col = dim; col-- > 0;) {
    double s = b[col];
    for (std::size_t k = col + 1; k < dim; ++k) s -= a.at(col, k) * lambda[k];
    lambda[col] = a.at(col, col) != 0.0 ? s / a.at(col, col) : 0.0;
  }

  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double lg = j + 1 < m ? lambda[n + j] : 0.0;
      out.at(i, j) =
          -x.at(i, j) * (1.0 - (c.at(i, j) - lambda[i] - lg) / eps);
    }
  return out;
}

// Shared chain rule: given dL/dc for every cost entry, push gradients
// into the embedding rows. d cos(p, w)/dp = (w_hat - cos * p_hat)/|p|
// and dc/d cos = -1; zero-norm rows were scored with a constant cosine
// so they receive no gradient.
void cost_backward(const Matrix& parts, const Matrix& words, const Matrix& dc,
                   Matrix& d_parts, Matrix& d_words) {
  const std::vector<double> pn = row_norms(parts);
  const std::vector<double> wn = row_norms(words);
  for (std::size_t i = 0; i < parts.rows; ++i) {
    if (pn[i] == 0.0) continue;
    const double* p = parts.row_ptr(i);
    for (std::size_t j = 0; j < words.rows; ++j) {
      const double w_up = dc.at(i, j);
      if (w_up == 0.0 || wn[j] == 0.0) continue;
      const double* w = words.row_ptr(j);
      double dot = 0.0;
      for (std::size_t kk = 0; kk < parts.cols; ++kk) dot += p[kk] * w[kk];
      const double inv = 1.0 / (pn[i] * wn[j]);
      const double cosine = dot * inv;
      for (std::size_t kk = 0; kk < parts.cols; ++kk) {
        d_parts.at(i, kk) +=
            -w_up * (w[kk] * inv - cosine * p[kk] / (pn[i] * pn[i]));
        d_words.at(j, kk) +=
            -w_up * (p[kk] * inv - cosine * w[kk] / (wn[j] * wn[j]));
      }
    }
  }
}

}  // namespace

EmdGradient emd_gradient(const Matrix& parts, const Matrix& words,
                         const SinkhornConfig& cfg, double upstream) {
  TransportPlan plan;
  emd_similarity(parts, words, cfg, &plan);
  EmdGradient g{Matrix(parts.rows, parts.cols), Matrix(words.rows, words.cols)};
  if (upstream == 0.0) return g;
  const CostMatrix c = cosine_cost(parts, words);
  Matrix dc = emd_cost_gradient(c.values, plan, cfg.epsilon);
  for (double& v : dc.data) v *= upstream;
  cost_backward(parts, words, dc, g.d_parts, g.d_words);
  return g;
}

Tape::Id emd_score(Tape& t, Tape::Id parts, Tape::Id words,
                   const SinkhornConfig& cfg, TransportPlan* plan_out) {
  TransportPlan plan;
  const double r = emd_similarity(t.value(parts), t.value(words), cfg, &plan);
  const CostMatrix c = cosine_cost(t.value(parts), t.value(words));
  Matrix drdc = emd_cost_gradient(c.values, plan, cfg.epsilon);
  if (plan_out) *plan_out = std::move(plan);
  return t.custom(
      Matrix(1, 1, r), {parts, words},
      [drdc = std::move(drdc)](Tape& tt, const std::vector<Tape::Id>& in,
                               Tape::Id self) {
        const double up = tt.grad_ref(self).data[0];
        if (up == 0.0) return;
        Matrix dc = drdc;
        for (double& v : dc.data) v *= up;
        cost_backward(tt.value(in[0]), tt.value(in[1]), dc,
                      tt.grad_ref(in[0]), tt.grad_ref(in[1]));
      },
      "emd_score");
}

Tape::Id chamfer_score(Tape& t, Tape::Id parts, Tape::Id words) {
  const Matrix& pv = t.value(parts);
  const Matrix& wv = t.value(words);
  const CostMatrix c = cosine_cost(pv, wv);
  const std::size_t n = c.values.rows, m = c.values.cols;

  // Record the argmins so the backward pass routes through the selected
  // entries only; ties go to the lowest index.
  std::vector<std::size_t> row_arg(n, 0), col_arg(m, 0);
  double row_term = 0.0, col_term = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t bj = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (c.values.at(i, j) < c.values.at(i, bj)) bj = j;
    row_arg[i] = bj;
    row_term += c.values.at(i, bj);
  }
  for (std::size_t j = 0; j < m; ++j) {
    std::size_t bi = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (c.values.at(i, j) < c.values.at(bi, j)) bi = i;
    col_arg[j] = bi;
    col_term += c.values.at(bi, j);
  }
  const double r = std::clamp(-0.5 * (row_term / static_cast<double>(n) +
                                      col_term / static_cast<double>(m)),
                              -2.0, 0.0);
  return t.custom(
      Matrix(1, 1, r), {parts, words},
      [row_arg = std::move(row_arg), col_arg = std::move(col_arg), n, m](
          Tape& tt, const std::vector<Tape::Id>& in, Tape::Id self) {
        const double up = tt.grad_ref(self).data[0];
        if (up == 0.0) return;
        Matrix dc(n, m);
        for (std::size_t i = 0; i < n; ++i)
          dc.at(i, row_arg[i]) += -up * 0.5 / static_cast<double>(n);
        for (std::size_t j = 0; j < m; ++j)
          dc.at(col_arg[j], j) += -up * 0.5 / static_cast<double>(m);
        cost_backward(tt.value(in[0]), tt.value(in[1]), dc,
                      tt.grad_ref(in[0]), tt.grad_ref(in[1]));
      },
      "chamfer_score");
}

}  // namespace otmatch
