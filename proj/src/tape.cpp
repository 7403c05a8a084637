#include "xmatch/tape.hpp"

#include <cmath>
#include <span>
#include <string>

namespace xmatch {

namespace {

std::size_t argmax(std::span<const double> x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[best]) best = i;  // ties keep the lowest index
  }
  return best;
}

}  // namespace

Var Tape::push(Node node, const char* op_name) {
  if (!node.value.all_finite()) {
    throw NumericError(std::string(op_name) + ": non-finite result");
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::at(Var v, const char* who) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw StateError(std::string(who) + ": variable not on this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::input(Matrix value) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(value);
  return push(std::move(n), "input");
}

Var Tape::param(Matrix value) {
  Node n;
  n.op = Op::Param;
  n.value = std::move(value);
  Var v = push(std::move(n), "param");
  params_.push_back(v);
  return v;
}

Var Tape::matmul(Var a, Var b) {
  Node n;
  n.op = Op::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.value = xmatch::matmul(at(a, "matmul").value, at(b, "matmul").value);
  return push(std::move(n), "matmul");
}

Var Tape::transpose(Var a) {
  Node n;
  n.op = Op::Transpose;
  n.a = a.id;
  n.value = xmatch::transpose(at(a, "transpose").value);
  return push(std::move(n), "transpose");
}

Var Tape::add(Var a, Var b) {
  Node n;
  n.op = Op::Add;
  n.a = a.id;
  n.b = b.id;
  n.value = xmatch::add(at(a, "add").value, at(b, "add").value);
  return push(std::move(n), "add");
}

Var Tape::sub(Var a, Var b) {
  Node n;
  n.op = Op::Sub;
  n.a = a.id;
  n.b = b.id;
  n.value = xmatch::sub(at(a, "sub").value, at(b, "sub").value);
  return push(std::move(n), "sub");
}

Var Tape::mul(Var a, Var b) {
  Node n;
  n.op = Op::Mul;
  n.a = a.id;
  n.b = b.id;
  n.value = xmatch::hadamard(at(a, "mul").value, at(b, "mul").value);
  return push(std::move(n), "mul");
}

Var Tape::scale(Var a, double c) {
  Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.scalar = c;
  n.value = xmatch::scale(at(a, "scale").value, c);
  return push(std::move(n), "scale");
}

Var Tape::add_scalar(Var a, double c) {
  Node n;
  n.op = Op::AddScalar;
  n.a = a.id;
  n.scalar = c;
  n.value = at(a, "add_scalar").value;
  for (double& v : n.value.values()) v += c;
  return push(std::move(n), "add_scalar");
}

Var Tape::add_rowvec(Var a, Var v) {
  const Matrix& ma = at(a, "add_rowvec").value;
  const Matrix& mv = at(v, "add_rowvec").value;
  if (mv.rows() != 1 || mv.cols() != ma.cols()) {
    throw DimensionError("add_rowvec: vector shape");
  }
  Node n;
  n.op = Op::AddRowVec;
  n.a = a.id;
  n.b = v.id;
  n.value = ma;
  for (std::size_t r = 0; r < ma.rows(); ++r) {
    for (std::size_t c = 0; c < ma.cols(); ++c) n.value(r, c) += mv(0, c);
  }
  return push(std::move(n), "add_rowvec");
}

Var Tape::sub_broadcast(Var a, Var s) {
  const Matrix& ma = at(a, "sub_broadcast").value;
  const Matrix& ms = at(s, "sub_broadcast").value;
  if (ms.rows() != 1 || ms.cols() != 1) {
    throw DimensionError("sub_broadcast: subtrahend must be 1x1");
  }
  Node n;
  n.op = Op::SubBroadcast;
  n.a = a.id;
  n.b = s.id;
  n.value = ma;
  const double c = ms(0, 0);
  for (double& v : n.value.values()) v -= c;
  return push(std::move(n), "sub_broadcast");
}

Var Tape::relu(Var a) {
  Node n;
  n.op = Op::Relu;
  n.a = a.id;
  n.value = xmatch::relu(at(a, "relu").value);
  return push(std::move(n), "relu");
}

Var Tape::exp(Var a) {
  Node n;
  n.op = Op::Exp;
  n.a = a.id;
  n.value = at(a, "exp").value;
  for (double& v : n.value.values()) v = std::exp(v);
  return push(std::move(n), "exp");
}

Var Tape::log(Var a) {
  Node n;
  n.op = Op::Log;
  n.a = a.id;
  n.value = at(a, "log").value;
  for (double& v : n.value.values()) v = std::log(v);
  return push(std::move(n), "log");
}

Var Tape::tanh(Var a) {
  Node n;
  n.op = Op::Tanh;
  n.a = a.id;
  n.value = at(a, "tanh").value;
  for (double& v : n.value.values()) v = std::tanh(v);
  return push(std::move(n), "tanh");
}

Var Tape::sigmoid(Var a) {
  Node n;
  n.op = Op::Sigmoid;
  n.a = a.id;
  n.value = at(a, "sigmoid").value;
  for (double& v : n.value.values()) v = xmatch::sigmoid(v);
  return push(std::move(n), "sigmoid");
}

Var Tape::row_softmax(Var a, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("row_softmax: lambda must be positive");
  const Matrix& ma = at(a, "row_softmax").value;
  if (ma.cols() == 0) throw DomainError("row_softmax: empty rows");
  Node n;
  n.op = Op::RowSoftmax;
  n.a = a.id;
  n.scalar = lambda;
  n.value = Matrix(ma.rows(), ma.cols());
  for (std::size_t r = 0; r < ma.rows(); ++r) {
    const std::vector<double> w = softmax_scaled(ma.row(r), lambda);
    for (std::size_t c = 0; c < ma.cols(); ++c) n.value(r, c) = w[c];
  }
  return push(std::move(n), "row_softmax");
}

Var Tape::row_l2_normalize(Var a, double eps) {
  if (eps < 0.0) throw DomainError("row_l2_normalize: negative eps");
  const Matrix& ma = at(a, "row_l2_normalize").value;
  Node n;
  n.op = Op::RowL2Normalize;
  n.a = a.id;
  n.scalar = eps;
  n.value = Matrix(ma.rows(), ma.cols());
  for (std::size_t r = 0; r < ma.rows(); ++r) {
    const std::vector<double> y = l2_normalize(ma.row(r), eps);
    for (std::size_t c = 0; c < ma.cols(); ++c) n.value(r, c) = y[c];
  }
  return push(std::move(n), "row_l2_normalize");
}

Var Tape::sum_all(Var a) {
  const Matrix& ma = at(a, "sum_all").value;
  double s = 0.0;
  for (double v : ma.values()) s += v;
  Node n;
  n.op = Op::SumAll;
  n.a = a.id;
  n.value = Matrix(1, 1, {s});
  return push(std::move(n), "sum_all");
}

Var Tape::row_sums(Var a) {
  const Matrix& ma = at(a, "row_sums").value;
  Node n;
  n.op = Op::RowSums;
  n.a = a.id;
  n.value = Matrix(ma.rows(), 1);
  for (std::size_t r = 0; r < ma.rows(); ++r) {
    double s = 0.0;
    for (double v : ma.row(r)) s += v;
    n.value(r, 0) = s;
  }
  return push(std::move(n), "row_sums");
}

Var Tape::max_all(Var a) {
  const Matrix& ma = at(a, "max_all").value;
  if (ma.empty()) throw DomainError("max_all: empty matrix");
  Node n;
  n.op = Op::MaxAll;
  n.a = a.id;
  const std::size_t best = argmax(ma.values());
  n.indices = {static_cast<int>(best)};
  n.value = Matrix(1, 1, {ma.values()[best]});
  return push(std::move(n), "max_all");
}

Var Tape::row_max(Var a) {
  const Matrix& ma = at(a, "row_max").value;
  if (ma.cols() == 0) throw DomainError("row_max: empty rows");
  Node n;
  n.op = Op::RowMax;
  n.a = a.id;
  n.value = Matrix(ma.rows(), 1);
  n.indices.resize(ma.rows());
  for (std::size_t r = 0; r < ma.rows(); ++r) {
    const std::size_t best = argmax(ma.row(r));
    n.indices[r] = static_cast<int>(best);
    n.value(r, 0) = ma(r, best);
  }
  return push(std::move(n), "row_max");
}

Var Tape::gather_rows(Var a, std::vector<int> indices) {
  const Matrix& ma = at(a, "gather_rows").value;
  if (indices.empty()) throw DomainError("gather_rows: empty index list");
  Node n;
  n.op = Op::GatherRows;
  n.a = a.id;
  n.value = Matrix(indices.size(), ma.cols());
  for (std::size_t t = 0; t < indices.size(); ++t) {
    const int r = indices[t];
    if (r < 0 || r >= static_cast<int>(ma.rows())) {
      throw DomainError("gather_rows: row " + std::to_string(r) + " out of " +
                        std::to_string(ma.rows()));
    }
    for (std::size_t c = 0; c < ma.cols(); ++c) {
      n.value(t, c) = ma(static_cast<std::size_t>(r), c);
    }
  }
  n.indices = std::move(indices);
  return push(std::move(n), "gather_rows");
}

Var Tape::stack_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DomainError("stack_rows: no rows");
  const Matrix& first = at(parts[0], "stack_rows").value;
  const std::size_t cols = first.cols();
  Node n;
  n.op = Op::StackRows;
  n.value = Matrix(parts.size(), cols);
  n.indices.reserve(parts.size());
  for (std::size_t t = 0; t < parts.size(); ++t) {
    const Matrix& part = at(parts[t], "stack_rows").value;
    if (part.rows() != 1 || part.cols() != cols) {
      throw DimensionError("stack_rows: part " + std::to_string(t) + " shape");
    }
    for (std::size_t c = 0; c < cols; ++c) n.value(t, c) = part(0, c);
    n.indices.push_back(parts[t].id);
  }
  return push(std::move(n), "stack_rows");
}

const Matrix& Tape::value(Var v) const { return at(v, "value").value; }

const Matrix& Tape::grad(Var v) const {
  if (!backward_done_) throw StateError("grad: backward() has not run");
  return at(v, "grad").adjoint;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw StateError("backward: empty tape");
  if (backward_done_) throw StateError("backward: already run on this tape");
  const Node& loss_node = at(loss, "backward");
  if (loss_node.value.rows() != 1 || loss_node.value.cols() != 1) {
    throw DomainError("backward: loss must be 1x1");
  }

  for (Node& n : nodes_) {
    n.adjoint = Matrix(n.value.rows(), n.value.cols());
  }
  nodes_[static_cast<std::size_t>(loss.id)].adjoint(0, 0) = 1.0;

  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    const Matrix& g = n.adjoint;
    switch (n.op) {
      case Op::Input:
      case Op::Param:
        break;
      case Op::MatMul: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        Node& nb = nodes_[static_cast<std::size_t>(n.b)];
        const Matrix ga = xmatch::matmul(g, xmatch::transpose(nb.value));
        const Matrix gb = xmatch::matmul(xmatch::transpose(na.value), g);
        na.adjoint = xmatch::add(na.adjoint, ga);
        nb.adjoint = xmatch::add(nb.adjoint, gb);
        break;
      }
      case Op::Transpose: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        na.adjoint = xmatch::add(na.adjoint, xmatch::transpose(g));
        break;
      }
      case Op::Add: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        Node& nb = nodes_[static_cast<std::size_t>(n.b)];
        na.adjoint = xmatch::add(na.adjoint, g);
        nb.adjoint = xmatch::add(nb.adjoint, g);
        break;
      }
      case Op::Sub: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        Node& nb = nodes_[static_cast<std::size_t>(n.b)];
        na.adjoint = xmatch::add(na.adjoint, g);
        nb.adjoint = xmatch::sub(nb.adjoint, g);
        break;
      }
      case Op::Mul: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        Node& nb = nodes_[static_cast<std::size_t>(n.b)];
        na.adjoint = xmatch::add(na.adjoint, xmatch::hadamard(g, nb.value));
        nb.adjoint = xmatch::add(nb.adjoint, xmatch::hadamard(g, na.value));
        break;
      }
      case Op::Scale: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        na.adjoint = xmatch::add(na.adjoint, xmatch::scale(g, n.scalar));
        break;
      }
      case Op::AddScalar: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        na.adjoint = xmatch::add(na.adjoint, g);
        break;
      }
      case Op::AddRowVec: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        Node& nv = nodes_[static_cast<std::size_t>(n.b)];
        na.adjoint = xmatch::add(na.adjoint, g);
        for (std::size_t c = 0; c < g.cols(); ++c) {
          double s = 0.0;
          for (std::size_t r = 0; r < g.rows(); ++r) s += g(r, c);
          nv.adjoint(0, c) += s;
        }
        break;
      }
      case Op::SubBroadcast: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        Node& ns = nodes_[static_cast<std::size_t>(n.b)];
        na.adjoint = xmatch::add(na.adjoint, g);
        double s = 0.0;
        for (double v : g.values()) s += v;
        ns.adjoint(0, 0) -= s;
        break;
      }
      case Op::Relu: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (na.value.values()[j] > 0.0) na.adjoint.values()[j] += g.values()[j];
        }
        break;
      }
      case Op::Exp: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        for (std::size_t j = 0; j < g.size(); ++j) {
          na.adjoint.values()[j] += g.values()[j] * n.value.values()[j];
        }
        break;
      }
      case Op::Log: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        for (std::size_t j = 0; j < g.size(); ++j) {
          na.adjoint.values()[j] += g.values()[j] / na.value.values()[j];
        }
        break;
      }
      case Op::Tanh: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        for (std::size_t j = 0; j < g.size(); ++j) {
          const double t = n.value.values()[j];
          na.adjoint.values()[j] += g.values()[j] * (1.0 - t * t);
        }
        break;
      }
      case Op::Sigmoid: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        for (std::size_t j = 0; j < g.size(); ++j) {
          const double s = n.value.values()[j];
          na.adjoint.values()[j] += g.values()[j] * s * (1.0 - s);
        }
        break;
      }
      case Op::RowSoftmax: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        const double lambda = n.scalar;
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double gw = 0.0;
          for (std::size_t c = 0; c < g.cols(); ++c) gw += g(r, c) * n.value(r, c);
          for (std::size_t c = 0; c < g.cols(); ++c) {
            na.adjoint(r, c) += lambda * n.value(r, c) * (g(r, c) - gw);
          }
        }
        break;
      }
      case Op::RowL2Normalize: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        const double eps = n.scalar;
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const double norm = l2_norm(na.value.row(r));
          const double denom = std::max(norm, eps);
          if (denom == 0.0) {  // eps 0 and zero row: identity map
            for (std::size_t c = 0; c < g.cols(); ++c) na.adjoint(r, c) += g(r, c);
          } else if (norm >= eps) {
            double gy = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) gy += g(r, c) * n.value(r, c);
            for (std::size_t c = 0; c < g.cols(); ++c) {
              na.adjoint(r, c) += (g(r, c) - n.value(r, c) * gy) / norm;
            }
          } else {  // constant denominator branch
            for (std::size_t c = 0; c < g.cols(); ++c) na.adjoint(r, c) += g(r, c) / denom;
          }
        }
        break;
      }
      case Op::SumAll: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        const double gs = g(0, 0);
        for (double& v : na.adjoint.values()) v += gs;
        break;
      }
      case Op::RowSums: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        for (std::size_t r = 0; r < na.adjoint.rows(); ++r) {
          const double gr = g(r, 0);
          for (std::size_t c = 0; c < na.adjoint.cols(); ++c) na.adjoint(r, c) += gr;
        }
        break;
      }
      case Op::MaxAll: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        na.adjoint.values()[static_cast<std::size_t>(n.indices[0])] += g(0, 0);
        break;
      }
      case Op::RowMax: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        for (std::size_t r = 0; r < g.rows(); ++r) {
          na.adjoint(r, static_cast<std::size_t>(n.indices[r])) += g(r, 0);
        }
        break;
      }
      case Op::GatherRows: {
        Node& na = nodes_[static_cast<std::size_t>(n.a)];
        for (std::size_t t = 0; t < n.indices.size(); ++t) {
          const auto r = static_cast<std::size_t>(n.indices[t]);
          for (std::size_t c = 0; c < g.cols(); ++c) na.adjoint(r, c) += g(t, c);
        }
        break;
      }
      case Op::StackRows: {
        for (std::size_t t = 0; t < n.indices.size(); ++t) {
          Node& np = nodes_[static_cast<std::size_t>(n.indices[t])];
          for (std::size_t c = 0; c < g.cols(); ++c) np.adjoint(0, c) += g(t, c);
        }
        break;
      }
    }
  }
  backward_done_ = true;
}

}  // namespace xmatch
