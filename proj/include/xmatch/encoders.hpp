#pragma once

#include <string>
#include <utility>
#include <vector>

#include "xmatch/matrix.hpp"
#include "xmatch/rng.hpp"
#include "xmatch/tape.hpp"

namespace xmatch {

// Raw region features of one image: k rows of width raw_dim.
struct ImageFeatures {
  Matrix f;

  std::size_t region_count() const { return f.rows(); }
};

// A tokenized sentence as vocabulary indices.
struct WordSequence {
  std::vector<int> tokens;

  std::size_t length() const { return tokens.size(); }
};

// One direction of the GRU: update/reset/candidate gates.
struct GruParams {
  Matrix w_update, w_reset, w_cand;  // g x embed
  Matrix u_update, u_reset, u_cand;  // g x g
  Matrix b_update, b_reset, b_cand;  // 1 x g
};

// The complete trainable state of the model.
struct ModelParams {
  Matrix w_proj;     // hidden x raw_dim
  Matrix b_proj;     // 1 x hidden
  Matrix embedding;  // vocab x embed
  GruParams gru_fwd;
  GruParams gru_bwd;

  // Every matrix with its canonical name, in the fixed order used by
  // checkpoints and optimizer state.
  std::vector<std::pair<std::string, Matrix*>> entries();
  std::vector<std::pair<std::string, const Matrix*>> entries() const;

  void validate() const;  // shape consistency and finiteness
};

struct ModelDims {
  std::size_t raw_dim = 2048;
  std::size_t hidden = 1024;
  std::size_t embed = 300;
  std::size_t vocab = 0;
};

ModelDims dims_of(const ModelParams& params);

// Fresh parameters: weights uniform in +/-sqrt(6/(fan_in+fan_out)), biases
// zero, embeddings uniform in +/-0.1. Draw order is fixed by entries().
ModelParams init_params(const ModelDims& dims, Rng& rng);

// Row-wise affine map of raw region features into the joint space: k x hidden.
Matrix project_regions(const Matrix& features, const ModelParams& params);

// Embedding lookup: row i is the embedding of tokens[i]; n x embed.
Matrix embed_words(const std::vector<int>& tokens, const ModelParams& params);

// One GRU step. x is 1 x embed, h_prev is 1 x g; returns 1 x g.
Matrix gru_step(const Matrix& x, const Matrix& h_prev, const GruParams& gates);

// Bidirectional encoding: word i gets the average of the forward state after
// reading tokens[0..i] and the backward state after reading tokens[i..n-1],
// both scans starting from the zero state. Returns n x hidden.
Matrix encode_sentence(const std::vector<int>& tokens, const ModelParams& params);

// Forward scan only: word i gets the forward hidden state. Returns n x hidden.
Matrix encode_sentence_unidirectional(const std::vector<int>& tokens,
                                      const ModelParams& params);

// Parameter handles on a tape, plus cached transposes used by the builders.
struct GruVars {
  Var w_update, w_reset, w_cand;
  Var u_update, u_reset, u_cand;
  Var b_update, b_reset, b_cand;
  Var w_update_t, w_reset_t, w_cand_t;
  Var u_update_t, u_reset_t, u_cand_t;
};

struct ParamVars {
  Var w_proj, b_proj, embedding;
  Var w_proj_t;
  GruVars fwd;
  GruVars bwd;
};

// Registers every parameter on the tape in entries() order.
ParamVars bind_params(Tape& tape, const ModelParams& params);

Var project_regions_node(Tape& tape, Var features, const ParamVars& params);
Var gru_step_node(Tape& tape, Var x, Var h_prev, const GruVars& gates);
Var encode_sentence_node(Tape& tape, const std::vector<int>& tokens,
                         const ParamVars& params, bool bidirectional = true);

// Parameter gradients after backward(), in entries() order.
std::vector<Matrix> collect_grads(const Tape& tape, const ParamVars& params);

}  // namespace xmatch
