#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "otmatch/errors.hpp"
#include "otmatch/matrix.hpp"

namespace otmatch {

// A named trainable tensor. grad always has the same shape as value and
// is zeroed at the start of every optimizer step.
struct Parameter {
  std::string id;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string id_, Matrix value_)
      : id(std::move(id_)),
        value(std::move(value_)),
        grad(value.rows, value.cols) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

enum class PoolMode { Mean, Max };

// Explicit row-index groups for grouped pooling; every group must be
// nonempty.
using RowGroups = std::vector<std::vector<std::size_t>>;

// Reverse-mode autodiff over an explicit recorded operation tape.
// Forward calls append nodes; backward() replays the tape in reverse
// order, accumulating into node grads and, for parameter leaves, into
// Parameter::grad. Every primitive checks its result for NaN/Inf.
// A Tape owns its intermediates; independent tapes may be used from
// different threads.
class Tape {
 public:
  using Id = std::uint32_t;
  using Backprop = std::function<void(Tape&, const std::vector<Id>&, Id)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. input() copies; ref() and param() alias caller-owned storage
  // which must outlive the tape.
  Id input(Matrix value);
  Id ref(const Matrix& value);
  Id param(Parameter& p);

  Id matmul(Id a, Id b);
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);  // elementwise
  Id scale(Id a, double s);
  Id tanh(Id a);
  Id sigmoid(Id a);
  Id relu(Id a);
  Id one_minus(Id a);  // 1 - x, elementwise
  Id concat_cols(Id a, Id b);
  Id concat_rows(const std::vector<Id>& parts);
  Id select_rows(Id source, std::vector<std::size_t> row_ids);
  Id broadcast_row(Id row, std::size_t copies);
  Id pool_rows(Id x, PoolMode mode, const RowGroups* groups = nullptr);
  Id sum(Id a);  // 1x1 sum of all entries
  // Mean over rows of -log softmax(logits)[label]. labels.size() must
  // equal logits.rows and every label must lie in [0, logits.cols).
  Id softmax_cross_entropy(Id logits, std::vector<int> labels);

  // Appends a node with a caller-supplied backward; used by ops defined
  // outside this file (the matcher scores).
  Id custom(Matrix value, std::vector<Id> inputs, Backprop backprop,
            const char* opname);

  const Matrix& value(Id id) const { return nodes_[id].value(); }
  Matrix& grad_ref(Id id) { return nodes_[id].grad; }
  const Matrix& grad(Id id) const { return nodes_[id].grad; }

  // root must be 1x1. Seeds d(root)=1 and replays the tape backward.
  void backward(Id root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;  // set for ref/param leaves
    Parameter* parameter = nullptr;
    Matrix grad;
    std::vector<Id> inputs;
    Backprop backprop;  // empty for leaves

    const Matrix& value() const { return external ? *external : owned; }
  };

  std::vector<Node> nodes_;

  Id push(Matrix value, std::vector<Id> inputs, Backprop backprop,
          const char* opname);
  void check_same_shape(Id a, Id b, const char* opname) const;
};

}  // namespace otmatch
