#include "xmatch/encoders.hpp"

#include <cmath>
#include <iterator>

namespace xmatch {

namespace {

std::vector<std::pair<std::string, Matrix*>> gru_entries(const std::string& prefix,
                                                         GruParams& g) {
  return {
      {prefix + ".w_update", &g.w_update}, {prefix + ".w_reset", &g.w_reset},
      {prefix + ".w_cand", &g.w_cand},     {prefix + ".u_update", &g.u_update},
      {prefix + ".u_reset", &g.u_reset},   {prefix + ".u_cand", &g.u_cand},
      {prefix + ".b_update", &g.b_update}, {prefix + ".b_reset", &g.b_reset},
      {prefix + ".b_cand", &g.b_cand},
  };
}

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

GruParams init_gru(std::size_t g, std::size_t embed, Rng& rng) {
  GruParams p;
  const double wb = glorot_bound(embed, g);
  const double ub = glorot_bound(g, g);
  p.w_update = uniform_matrix(g, embed, wb, rng);
  p.w_reset = uniform_matrix(g, embed, wb, rng);
  p.w_cand = uniform_matrix(g, embed, wb, rng);
  p.u_update = uniform_matrix(g, g, ub, rng);
  p.u_reset = uniform_matrix(g, g, ub, rng);
  p.u_cand = uniform_matrix(g, g, ub, rng);
  p.b_update = Matrix(1, g);
  p.b_reset = Matrix(1, g);
  p.b_cand = Matrix(1, g);
  return p;
}

void check_gru(const GruParams& g, std::size_t hidden, std::size_t embed,
               const std::string& prefix) {
  auto expect = [&](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw DimensionError(prefix + "." + name + ": expected " + std::to_string(r) +
                           "x" + std::to_string(c) + ", got " +
                           std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
  };
  expect(g.w_update, hidden, embed, "w_update");
  expect(g.w_reset, hidden, embed, "w_reset");
  expect(g.w_cand, hidden, embed, "w_cand");
  expect(g.u_update, hidden, hidden, "u_update");
  expect(g.u_reset, hidden, hidden, "u_reset");
  expect(g.u_cand, hidden, hidden, "u_cand");
  expect(g.b_update, 1, hidden, "b_update");
  expect(g.b_reset, 1, hidden, "b_reset");
  expect(g.b_cand, 1, hidden, "b_cand");
}

}  // namespace

std::vector<std::pair<std::string, Matrix*>> ModelParams::entries() {
  std::vector<std::pair<std::string, Matrix*>> out = {
      {"w_proj", &w_proj}, {"b_proj", &b_proj}, {"embedding", &embedding}};
  for (auto& e : gru_entries("gru_fwd", gru_fwd)) out.push_back(std::move(e));
  for (auto& e : gru_entries("gru_bwd", gru_bwd)) out.push_back(std::move(e));
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::entries() const {
  auto mutable_entries = const_cast<ModelParams*>(this)->entries();
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.reserve(mutable_entries.size());
  for (auto& [name, m] : mutable_entries) out.emplace_back(std::move(name), m);
  return out;
}

void ModelParams::validate() const {
  const std::size_t hidden = w_proj.rows();
  const std::size_t embed = embedding.cols();
  if (hidden == 0 || w_proj.cols() == 0) throw DimensionError("params: empty w_proj");
  if (embedding.rows() == 0 || embed == 0) throw DimensionError("params: empty embedding");
  if (b_proj.rows() != 1 || b_proj.cols() != hidden) {
    throw DimensionError("params: b_proj must be 1x" + std::to_string(hidden));
  }
  check_gru(gru_fwd, hidden, embed, "gru_fwd");
  check_gru(gru_bwd, hidden, embed, "gru_bwd");
  for (const auto& [name, m] : entries()) {
    if (!m->all_finite()) throw NumericError("params: non-finite values in " + name);
  }
}

ModelDims dims_of(const ModelParams& params) {
  ModelDims d;
  d.raw_dim = params.w_proj.cols();
  d.hidden = params.w_proj.rows();
  d.embed = params.embedding.cols();
  d.vocab = params.embedding.rows();
  return d;
}

ModelParams init_params(const ModelDims& dims, Rng& rng) {
  if (dims.raw_dim == 0 || dims.hidden == 0 || dims.embed == 0 || dims.vocab == 0) {
    throw ConfigError("init_params: all dimensions must be positive");
  }
  ModelParams p;
  p.w_proj = uniform_matrix(dims.hidden, dims.raw_dim,
                            glorot_bound(dims.raw_dim, dims.hidden), rng);
  p.b_proj = Matrix(1, dims.hidden);
  p.embedding = uniform_matrix(dims.vocab, dims.embed, 0.1, rng);
  p.gru_fwd = init_gru(dims.hidden, dims.embed, rng);
  p.gru_bwd = init_gru(dims.hidden, dims.embed, rng);
  return p;
}

Matrix project_regions(const Matrix& features, const ModelParams& params) {
  if (features.empty()) throw DomainError("project_regions: empty features");
  if (features.cols() != params.w_proj.cols()) {
    throw DimensionError("project_regions: feature width " +
                         std::to_string(features.cols()) + " vs raw_dim " +
                         std::to_string(params.w_proj.cols()));
  }
  Matrix out = matmul(features, transpose(params.w_proj));
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += params.b_proj(0, c);
  }
  return out;
}

Matrix embed_words(const std::vector<int>& tokens, const ModelParams& params) {
  if (tokens.empty()) throw DomainError("embed_words: empty sentence");
  Matrix out(tokens.size(), params.embedding.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int t = tokens[i];
    if (t < 0 || t >= static_cast<int>(params.embedding.rows())) {
      throw VocabError("embed_words: token index " + std::to_string(t) +
                       " outside vocabulary of " +
                       std::to_string(params.embedding.rows()));
    }
    for (std::size_t c = 0; c < out.cols(); ++c) {
      out(i, c) = params.embedding(static_cast<std::size_t>(t), c);
    }
  }
  return out;
}

Matrix gru_step(const Matrix& x, const Matrix& h_prev, const GruParams& gates) {
  const Matrix z_pre =
      add(add(matmul(x, transpose(gates.w_update)), matmul(h_prev, transpose(gates.u_update))),
          gates.b_update);
  const Matrix r_pre =
      add(add(matmul(x, transpose(gates.w_reset)), matmul(h_prev, transpose(gates.u_reset))),
          gates.b_reset);
  Matrix z = z_pre;
  for (double& v : z.values()) v = sigmoid(v);
  Matrix r = r_pre;
  for (double& v : r.values()) v = sigmoid(v);
  const Matrix cand_pre =
      add(add(matmul(x, transpose(gates.w_cand)),
              matmul(hadamard(r, h_prev), transpose(gates.u_cand))),
          gates.b_cand);
  Matrix cand = cand_pre;
  for (double& v : cand.values()) v = std::tanh(v);
  return add(h_prev, hadamard(z, sub(cand, h_prev)));
}

namespace {

std::vector<Matrix> scan(const Matrix& embedded, const GruParams& gates, bool reverse) {
  const std::size_t n = embedded.rows();
  const std::size_t g = gates.u_update.rows();
  std::vector<Matrix> states(n);
  Matrix h(1, g);
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t i = reverse ? n - 1 - step : step;
    Matrix x(1, embedded.cols());
    for (std::size_t c = 0; c < embedded.cols(); ++c) x(0, c) = embedded(i, c);
    h = gru_step(x, h, gates);
    states[i] = h;
  }
  return states;
}

}  // namespace

Matrix encode_sentence(const std::vector<int>& tokens, const ModelParams& params) {
  const Matrix embedded = embed_words(tokens, params);
  const std::vector<Matrix> fwd = scan(embedded, params.gru_fwd, false);
  const std::vector<Matrix> bwd = scan(embedded, params.gru_bwd, true);
  Matrix out(tokens.size(), fwd[0].cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Matrix e = scale(add(fwd[i], bwd[i]), 0.5);
    for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) = e(0, c);
  }
  return out;
}

Matrix encode_sentence_unidirectional(const std::vector<int>& tokens,
                                      const ModelParams& params) {
  const Matrix embedded = embed_words(tokens, params);
  const std::vector<Matrix> fwd = scan(embedded, params.gru_fwd, false);
  Matrix out(tokens.size(), fwd[0].cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) = fwd[i](0, c);
  }
  return out;
}

namespace {

GruVars bind_gru(Tape& tape, const GruParams& g) {
  GruVars v;
  v.w_update = tape.param(g.w_update);
  v.w_reset = tape.param(g.w_reset);
  v.w_cand = tape.param(g.w_cand);
  v.u_update = tape.param(g.u_update);
  v.u_reset = tape.param(g.u_reset);
  v.u_cand = tape.param(g.u_cand);
  v.b_update = tape.param(g.b_update);
  v.b_reset = tape.param(g.b_reset);
  v.b_cand = tape.param(g.b_cand);
  v.w_update_t = tape.transpose(v.w_update);
  v.w_reset_t = tape.transpose(v.w_reset);
  v.w_cand_t = tape.transpose(v.w_cand);
  v.u_update_t = tape.transpose(v.u_update);
  v.u_reset_t = tape.transpose(v.u_reset);
  v.u_cand_t = tape.transpose(v.u_cand);
  return v;
}

}  // namespace

ParamVars bind_params(Tape& tape, const ModelParams& params) {
  params.validate();
  ParamVars v;
  v.w_proj = tape.param(params.w_proj);
  v.b_proj = tape.param(params.b_proj);
  v.embedding = tape.param(params.embedding);
  v.fwd = bind_gru(tape, params.gru_fwd);
  v.bwd = bind_gru(tape, params.gru_bwd);
  v.w_proj_t = tape.transpose(v.w_proj);
  return v;
}

Var project_regions_node(Tape& tape, Var features, const ParamVars& params) {
  return tape.add_rowvec(tape.matmul(features, params.w_proj_t), params.b_proj);
}

Var gru_step_node(Tape& tape, Var x, Var h_prev, const GruVars& gates) {
  const Var z_pre = tape.add(
      tape.add(tape.matmul(x, gates.w_update_t), tape.matmul(h_prev, gates.u_update_t)),
      gates.b_update);
  const Var r_pre = tape.add(
      tape.add(tape.matmul(x, gates.w_reset_t), tape.matmul(h_prev, gates.u_reset_t)),
      gates.b_reset);
  const Var z = tape.sigmoid(z_pre);
  const Var r = tape.sigmoid(r_pre);
  const Var cand_pre =
      tape.add(tape.add(tape.matmul(x, gates.w_cand_t),
                        tape.matmul(tape.mul(r, h_prev), gates.u_cand_t)),
               gates.b_cand);
  const Var cand = tape.tanh(cand_pre);
  return tape.add(h_prev, tape.mul(z, tape.sub(cand, h_prev)));
}

Var encode_sentence_node(Tape& tape, const std::vector<int>& tokens,
                         const ParamVars& params, bool bidirectional) {
  if (tokens.empty()) throw DomainError("encode_sentence_node: empty sentence");
  const std::size_t n = tokens.size();
  const std::size_t g = tape.value(params.fwd.u_update).rows();
  const std::size_t vocab = tape.value(params.embedding).rows();
  std::vector<Var> xs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int t = tokens[i];
    if (t < 0 || t >= static_cast<int>(vocab)) {
      throw VocabError("encode_sentence_node: token index " + std::to_string(t) +
                       " outside vocabulary of " + std::to_string(vocab));
    }
    xs[i] = tape.gather_rows(params.embedding, {t});
  }

  std::vector<Var> fwd(n);
  Var h = tape.input(Matrix(1, g));
  for (std::size_t i = 0; i < n; ++i) {
    h = gru_step_node(tape, xs[i], h, params.fwd);
    fwd[i] = h;
  }
  if (!bidirectional) return tape.stack_rows(fwd);

  std::vector<Var> bwd(n);
  h = tape.input(Matrix(1, g));
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t i = n - 1 - step;
    h = gru_step_node(tape, xs[i], h, params.bwd);
    bwd[i] = h;
  }
  std::vector<Var> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i] = tape.scale(tape.add(fwd[i], bwd[i]), 0.5);
  }
  return tape.stack_rows(rows);
}

std::vector<Matrix> collect_grads(const Tape& tape, const ParamVars& params) {
  const GruVars& f = params.fwd;
  const GruVars& b = params.bwd;
  const Var order[] = {params.w_proj, params.b_proj, params.embedding,
                       f.w_update,    f.w_reset,     f.w_cand,
                       f.u_update,    f.u_reset,     f.u_cand,
                       f.b_update,    f.b_reset,     f.b_cand,
                       b.w_update,    b.w_reset,     b.w_cand,
                       b.u_update,    b.u_reset,     b.u_cand,
                       b.b_update,    b.b_reset,     b.b_cand};
  std::vector<Matrix> grads;
  grads.reserve(std::size(order));
  for (Var v : order) grads.push_back(tape.grad(v));
  return grads;
}

}  // namespace xmatch
