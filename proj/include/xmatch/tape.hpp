#pragma once

#include <cstdint>
#include <vector>

#include "xmatch/matrix.hpp"

namespace xmatch {

// Handle to a node on a Tape. Only valid for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode gradient tape over matrix-valued primitives.
//
// Forward values are computed eagerly as ops are recorded, so the node list
// is topologically ordered by construction. A tape is single-owner: record
// one forward expression, call backward() once on a scalar node, then read
// adjoints. Parallel training uses independent tapes whose gradients are
// summed outside.
class Tape {
 public:
  // Leaves. param() additionally registers the node as a parameter slot.
  Var input(Matrix value);
  Var param(Matrix value);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var add_rowvec(Var a, Var v);     // a (r x c) + v (1 x c), broadcast over rows
  Var sub_broadcast(Var a, Var s);  // a - s, s is 1 x 1
  Var relu(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var row_softmax(Var a, double lambda);     // softmax of lambda*row, per row
  Var row_l2_normalize(Var a, double eps = kNormEps);
  Var sum_all(Var a);   // 1 x 1
  Var row_sums(Var a);  // r x 1
  Var max_all(Var a);   // 1 x 1; subgradient flows to the first maximum
  Var row_max(Var a);   // r x 1; first maximum per row
  Var gather_rows(Var a, std::vector<int> indices);
  Var stack_rows(const std::vector<Var>& parts);  // parts are 1 x c rows

  const Matrix& value(Var v) const;

  // Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse. loss must be
  // 1x1; a second call on the same tape is a StateError.
  void backward(Var loss);

  // Adjoint of a node after backward(); StateError before it.
  const Matrix& grad(Var v) const;

  const std::vector<Var>& params() const { return params_; }
  std::size_t node_count() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  enum class Op : std::uint8_t {
    Input, Param, MatMul, Transpose, Add, Sub, Mul, Scale, AddScalar,
    AddRowVec, SubBroadcast, Relu, Exp, Log, Tanh, Sigmoid, RowSoftmax,
    RowL2Normalize, SumAll, RowSums, MaxAll, RowMax, GatherRows, StackRows,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double scalar = 0.0;         // Scale/AddScalar constant, softmax lambda, eps
    std::vector<int> indices;    // GatherRows row list, StackRows input ids
    Matrix value;
    Matrix adjoint;
  };

  Var push(Node node, const char* op_name);
  const Node& at(Var v, const char* who) const;

  std::vector<Node> nodes_;
  std::vector<Var> params_;
  bool backward_done_ = false;
};

}  // namespace xmatch
