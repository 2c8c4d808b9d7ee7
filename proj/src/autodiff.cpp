#include "otmatch/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace otmatch {

Tape::Id Tape::push(Matrix value, std::vector<Id> inputs, Backprop backprop,
                    const char* opname) {
  if (!value.all_finite())
    throw NumericError(std::string(opname) + ": produced non-finite values");
  Node n;
  n.owned = std::move(value);
  n.inputs = std::move(inputs);
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

void Tape::check_same_shape(Id a, Id b, const char* opname) const {
  if (!value(a).same_shape(value(b)))
    throw DimensionError(std::string(opname) + ": operand shapes differ: " +
                         value(a).shape_str() + " vs " + value(b).shape_str());
}

Tape::Id Tape::input(Matrix value) {
  return push(std::move(value), {}, nullptr, "input");
}

Tape::Id Tape::ref(const Matrix& value) {
  if (!value.all_finite()) throw NumericError("ref: non-finite input");
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::param(Parameter& p) {
  if (!p.value.all_finite())
    throw NumericError("param " + p.id + ": non-finite values");
  Node n;
  n.external = &p.value;
  n.parameter = &p;
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::matmul(Id a, Id b) {
  Matrix c = otmatch::matmul(value(a), value(b));
  return push(std::move(c), {a, b},
              [](Tape& t, const std::vector<Id>& in, Id self) {
                const Matrix& dc = t.grad_ref(self);
                accumulate(t.grad_ref(in[0]), matmul_nt(dc, t.value(in[1])));
                accumulate(t.grad_ref(in[1]), matmul_tn(t.value(in[0]), dc));
              },
              "matmul");
}

Tape::Id Tape::add(Id a, Id b) {
  check_same_shape(a, b, "add");
  Matrix c = value(a);
  accumulate(c, value(b));
  return push(std::move(c), {a, b},
              [](Tape& t, const std::vector<Id>& in, Id self) {
                accumulate(t.grad_ref(in[0]), t.grad_ref(self));
                accumulate(t.grad_ref(in[1]), t.grad_ref(self));
              },
              "add");
}

Tape::Id Tape::sub(Id a, Id b) {
  check_same_shape(a, b, "sub");
  Matrix c = value(a);
  const Matrix& vb = value(b);
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= vb.data[i];
  return push(std::move(c), {a, b},
              [](Tape& t, const std::vector<Id>& in, Id self) {
                const Matrix& dc = t.grad_ref(self);
                accumulate(t.grad_ref(in[0]), dc);
                Matrix& db = t.grad_ref(in[1]);
                for (std::size_t i = 0; i < dc.data.size(); ++i)
                  db.data[i] -= dc.data[i];
              },
              "sub");
}

Tape::Id Tape::mul(Id a, Id b) {
  check_same_shape(a, b, "mul");
  Matrix c = value(a);
  const Matrix& vb = value(b);
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] *= vb.data[i];
  return push(std::move(c), {a, b},
              [](Tape& t, const std::vector<Id>& in, Id self) {
                const Matrix& dc = t.grad_ref(self);
                const Matrix& va = t.value(in[0]);
                const Matrix& vb2 = t.value(in[1]);
                Matrix& da = t.grad_ref(in[0]);
                Matrix& db = t.grad_ref(in[1]);
                for (std::size_t i = 0; i < dc.data.size(); ++i) {
                  da.data[i] += dc.data[i] * vb2.data[i];
                  db.data[i] += dc.data[i] * va.data[i];
                }
              },
              "mul");
}

Tape::Id Tape::scale(Id a, double s) {
  Matrix c = value(a);
  for (double& x : c.data) x *= s;
  return push(std::move(c), {a},
              [s](Tape& t, const std::vector<Id>& in, Id self) {
                const Matrix& dc = t.grad_ref(self);
                Matrix& da = t.grad_ref(in[0]);
                for (std::size_t i = 0; i < dc.data.size(); ++i)
                  da.data[i] += s * dc.data[i];
              },
              "scale");
}

Tape::Id Tape::tanh(Id a) {
  Matrix c = value(a);
  for (double& x : c.data) x = std::tanh(x);
  return push(std::move(c), {a},
              [](Tape& t, const std::vector<Id>& in, Id self) {
                const Matrix& y = t.value(self);
                const Matrix& dc = t.grad_ref(self);
                Matrix& da = t.grad_ref(in[0]);
                for (std::size_t i = 0; i < dc.data.size(); ++i)
                  da.data[i] += dc.data[i] * (1.0 - y.data[i] * y.data[i]);
              },
              "tanh");
}

Tape::Id Tape::sigmoid(Id a) {
  Matrix c = value(a);
  for (double& x : c.data) x = 1.0 / (1.0 + std::exp(-x));
  return push(std::move(c), {a},
              [](Tape& t, const std::vector<Id>& in, Id self) {
                const Matrix& y = t.value(self);
                const Matrix& dc = t.grad_ref(self);
                Matrix& da = t.grad_ref(in[0]);
                for (std::size_t i = 0; i < dc.data.size(); ++i)
                  da.data[i] += dc.data[i] * y.data[i] * (1.0 - y.data[i]);
              },
              "sigmoid");
}

Tape::Id Tape::relu(Id a) {
  Matrix c = value(a);
  for (double& x : c.data) x = x > 0.0 ? x : 0.0;
  return push(std::move(c), {a},
              [](Tape& t, const std::vector<Id>& in, Id self) {
                const Matrix& x = t.value(in[0]);
                const Matrix& dc = t.grad_ref(self);
                Matrix& da = t.grad_ref(in[0]);
                for (std::size_t i = 0; i < dc.data.size(); ++i)
                  if (x.data[i] > 0.0) da.data[i] += dc.data[i];
              },
              "relu");
}

Tape::Id Tape::one_minus(Id a) {
  Matrix c = value(a);
  for (double& x : c.data) x = 1.0 - x;
  return push(std::move(c), {a},
              [](Tape& t, const std::vector<Id>& in, Id self) {
                const Matrix& dc = t.grad_ref(self);
                Matrix& da = t.grad_ref(in[0]);
                for (std::size_t i = 0; i < dc.data.size(); ++i)
                  da.data[i] -= dc.data[i];
              },
              "one_minus");
}

Tape::Id Tape::concat_cols(Id a, Id b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.rows != vb.rows)
    throw DimensionError("concat_cols: row counts differ: " + va.shape_str() +
                         " vs " + vb.shape_str());
  Matrix c(va.rows, va.cols + vb.cols);
  for (std::size_t i = 0; i < va.rows; ++i) {
    std::copy(va.row_ptr(i), va.row_ptr(i) + va.cols, c.row_ptr(i));
    std::copy(vb.row_ptr(i), vb.row_ptr(i) + vb.cols, c.row_ptr(i) + va.cols);
  }
  return push(std::move(c), {a, b},
              [](Tape& t, const std::vector<Id>& in, Id self) {
                const Matrix& dc = t.grad_ref(self);
                Matrix& da = t.grad_ref(in[0]);
                Matrix& db = t.grad_ref(in[1]);
                for (std::size_t i = 0; i < da.rows; ++i) {
                  const double* src = dc.row_ptr(i);
                  for (std::size_t j = 0; j < da.cols; ++j)
                    da.at(i, j) += src[j];
                  for (std::size_t j = 0; j < db.cols; ++j)
                    db.at(i, j) += src[da.cols + j];
                }
              },
              "concat_cols");
}

Tape::Id Tape::concat_rows(const std::vector<Id>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = value(parts[0]).cols;
  std::size_t rows = 0;
  for (Id p : parts) {
    if (value(p).cols != cols)
      throw DimensionError("concat_rows: column counts differ");
    rows += value(p).rows;
  }
  Matrix c(rows, cols);
  std::size_t r = 0;
  for (Id p : parts) {
    const Matrix& v = value(p);
    std::copy(v.data.begin(), v.data.end(), c.row_ptr(r));
    r += v.rows;
  }
  return push(std::move(c), parts,
              [](Tape& t, const std::vector<Id>& in, Id self) {
                const Matrix& dc = t.grad_ref(self);
                std::size_t r0 = 0;
                for (Id p : in) {
                  Matrix& dp = t.grad_ref(p);
                  for (std::size_t i = 0; i < dp.rows; ++i)
                    for (std::size_t j = 0; j < dp.cols; ++j)
                      dp.at(i, j) += dc.at(r0 + i, j);
                  r0 += dp.rows;
                }
              },
              "concat_rows");
}

Tape::Id Tape::select_rows(Id source, std::vector<std::size_t> row_ids) {
  const Matrix& src = value(source);
  for (std::size_t id : row_ids)
    if (id >= src.rows)
      throw DataError("select_rows: row id " + std::to_string(id) +
                      " out of range for " + src.shape_str());
  Matrix c(row_ids.size(), src.cols);
  for (std::size_t r = 0; r < row_ids.size(); ++r)
    std::copy(src.row_ptr(row_ids[r]), src.row_ptr(row_ids[r]) + src.cols,
              c.row_ptr(r));
  return push(std::move(c), {source},
              [ids = std::move(row_ids)](Tape& t, const std::vector<Id>& in,
                                         Id self) {
                const Matrix& dc = t.grad_ref(self);
                Matrix& ds = t.grad_ref(in[0]);
                for (std::size_t r = 0; r < ids.size(); ++r)
                  for (std::size_t j = 0; j < ds.cols; ++j)
                    ds.at(ids[r], j) += dc.at(r, j);
              },
              "select_rows");
}

Tape::Id Tape::broadcast_row(Id row, std::size_t copies) {
  const Matrix& v = value(row);
  if (v.rows != 1) throw DimensionError("broadcast_row: input must be 1 x d");
  Matrix c(copies, v.cols);
  for (std::size_t i = 0; i < copies; ++i)
    std::copy(v.data.begin(), v.data.end(), c.row_ptr(i));
  return push(std::move(c), {row},
              [](Tape& t, const std::vector<Id>& in, Id self) {
                const Matrix& dc = t.grad_ref(self);
                Matrix& dr = t.grad_ref(in[0]);
                for (std::size_t i = 0; i < dc.rows; ++i)
                  for (std::size_t j = 0; j < dc.cols; ++j)
                    dr.at(0, j) += dc.at(i, j);
              },
              "broadcast_row");
}

Tape::Id Tape::pool_rows(Id x, PoolMode mode, const RowGroups* groups) {
  const Matrix& v = value(x);
  RowGroups gs;
  if (groups) {
    gs = *groups;
  } else {
    gs.emplace_back(v.rows);
    for (std::size_t i = 0; i < v.rows; ++i) gs[0][i] = i;
  }
  for (const auto& g : gs)
    if (g.empty()) throw DimensionError("pool_rows: empty group");
  for (const auto& g : gs)
    for (std::size_t r : g)
      if (r >= v.rows)
        throw DimensionError("pool_rows: group row " + std::to_string(r) +
                             " out of range for " + v.shape_str());

  Matrix out(gs.size(), v.cols);
  // For max mode remember which row won each column; ties go to the
  // lowest row index so the backward pass is deterministic.
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::Max) argmax.assign(gs.size() * v.cols, 0);

  for (std::size_t g = 0; g < gs.size(); ++g) {
    if (mode == PoolMode::Mean) {
      const double inv = 1.0 / static_cast<double>(gs[g].size());
      for (std::size_t r : gs[g])
        for (std::size_t j = 0; j < v.cols; ++j)
          out.at(g, j) += v.at(r, j);
      for (std::size_t j = 0; j < v.cols; ++j) out.at(g, j) *= inv;
    } else {
      for (std::size_t j = 0; j < v.cols; ++j) {
        std::size_t best = v.rows;
        double bestv = 0.0;
        for (std::size_t r : gs[g]) {
          const double val = v.at(r, j);
          if (best == v.rows || val > bestv || (val == bestv && r < best)) {
            best = r;
            bestv = val;
          }
        }
        out.at(g, j) = bestv;
        argmax[g * v.cols + j] = best;
      }
    }
  }

  return push(
      std::move(out), {x},
      [mode, gs = std::move(gs), argmax = std::move(argmax)](
          Tape& t, const std::vector<Id>& in, Id self) {
        const Matrix& dc = t.grad_ref(self);
        Matrix& dx = t.grad_ref(in[0]);
        for (std::size_t g = 0; g < gs.size(); ++g) {
          if (mode == PoolMode::Mean) {
            const double inv = 1.0 / static_cast<double>(gs[g].size());
            for (std::size_t r : gs[g])
              for (std::size_t j = 0; j < dx.cols; ++j)
                dx.at(r, j) += inv * dc.at(g, j);
          } else {
            for (std::size_t j = 0; j < dx.cols; ++j)
              dx.at(argmax[g * dx.cols + j], j) += dc.at(g, j);
          }
        }
      },
      "pool_rows");
}

Tape::Id Tape::sum(Id a) {
  const Matrix& v = value(a);
  double s = 0.0;
  for (double x : v.data) s += x;
  return push(Matrix(1, 1, s), {a},
              [](Tape& t, const std::vector<Id>& in, Id self) {
                const double up = t.grad_ref(self).data[0];
                Matrix& da = t.grad_ref(in[0]);
                for (double& x : da.data) x += up;
              },
              "sum");
}

Tape::Id Tape::softmax_cross_entropy(Id logits, std::vector<int> labels) {
  const Matrix& z = value(logits);
  if (labels.size() != z.rows)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + z.shape_str() + " logits");
  for (int lab : labels)
    if (lab < 0 || static_cast<std::size_t>(lab) >= z.cols)
      throw DataError("softmax_cross_entropy: label " + std::to_string(lab) +
                      " outside [0, " + std::to_string(z.cols) + ")");

  // softmax cached for the backward pass: d logits = (softmax - onehot)/l.
  Matrix soft(z.rows, z.cols);
  double loss = 0.0;
  for (std::size_t i = 0; i < z.rows; ++i) {
    const double* row = z.row_ptr(i);
    double mx = row[0];
    for (std::size_t j = 1; j < z.cols; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < z.cols; ++j) {
      soft.at(i, j) = std::exp(row[j] - mx);
      denom += soft.at(i, j);
    }
    for (std::size_t j = 0; j < z.cols; ++j) soft.at(i, j) /= denom;
    loss += std::log(denom) - (row[labels[i]] - mx);
  }
  loss /= static_cast<double>(z.rows);

  return push(Matrix(1, 1, loss), {logits},
              [soft = std::move(soft), labels = std::move(labels)](
                  Tape& t, const std::vector<Id>& in, Id self) {
                const double up = t.grad_ref(self).data[0];
                if (up == 0.0) return;
                Matrix& dz = t.grad_ref(in[0]);
                const double inv = up / static_cast<double>(dz.rows);
                for (std::size_t i = 0; i < dz.rows; ++i) {
                  for (std::size_t j = 0; j < dz.cols; ++j)
                    dz.at(i, j) += inv * soft.at(i, j);
                  dz.at(i, static_cast<std::size_t>(labels[i])) -= inv;
                }
              },
              "softmax_cross_entropy");
}

Tape::Id Tape::custom(Matrix value, std::vector<Id> inputs, Backprop backprop,
                      const char* opname) {
  return push(std::move(value), std::move(inputs), std::move(backprop), opname);
}

void Tape::backward(Id root) {
  if (value(root).size() != 1)
    throw DimensionError("backward: root must be 1x1, got " +
                         value(root).shape_str());
  for (Node& n : nodes_) n.grad = Matrix(n.value().rows, n.value().cols);
  nodes_[root].grad.data[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backprop) n.backprop(*this, n.inputs, static_cast<Id>(i));
    if (n.parameter && n.parameter->trainable)
      accumulate(n.parameter->grad, n.grad);
  }
}

}  // namespace otmatch
