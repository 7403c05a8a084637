#include <cmath>
#include <vector>

#include "doctest.h"
#include "xmatch/encoders.hpp"
#include "xmatch/errors.hpp"
#include "xmatch/matrix.hpp"
#include "xmatch/rng.hpp"
#include "xmatch/tape.hpp"

using namespace xmatch;

namespace {

ModelDims tiny_dims() {
  ModelDims dims;
  dims.raw_dim = 5;
  dims.hidden = 4;
  dims.embed = 3;
  dims.vocab = 7;
  return dims;
}

ModelParams tiny_params(std::uint64_t seed = 17) {
  Rng rng(seed);
  return init_params(tiny_dims(), rng);
}

GruParams scalar_gates(double wz, double uz, double bz, double wr, double ur,
                       double br, double wh, double uh, double bh) {
  GruParams g;
  g.w_update = Matrix(1, 1, {wz});
  g.u_update = Matrix(1, 1, {uz});
  g.b_update = Matrix(1, 1, {bz});
  g.w_reset = Matrix(1, 1, {wr});
  g.u_reset = Matrix(1, 1, {ur});
  g.b_reset = Matrix(1, 1, {br});
  g.w_cand = Matrix(1, 1, {wh});
  g.u_cand = Matrix(1, 1, {uh});
  g.b_cand = Matrix(1, 1, {bh});
  return g;
}

// Independent single-vector GRU/encoder propagation used as a loop oracle.
std::vector<double> oracle_gru_step(const std::vector<double>& x,
                                    const std::vector<double>& h,
                                    const GruParams& g) {
  const std::size_t width = g.u_update.rows();
  auto affine = [&](const Matrix& w, const Matrix& u, const Matrix& b,
                    const std::vector<double>& hin) {
    std::vector<double> out(width);
    for (std::size_t i = 0; i < width; ++i) {
      double s = b(0, i);
      for (std::size_t j = 0; j < x.size(); ++j) s += w(i, j) * x[j];
      for (std::size_t j = 0; j < width; ++j) s += u(i, j) * hin[j];
      out[i] = s;
    }
    return out;
  };
  auto logistic = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };

  const std::vector<double> z_pre = affine(g.w_update, g.u_update, g.b_update, h);
  const std::vector<double> r_pre = affine(g.w_reset, g.u_reset, g.b_reset, h);
  std::vector<double> gated(width);
  for (std::size_t i = 0; i < width; ++i) gated[i] = logistic(r_pre[i]) * h[i];
  // Candidate uses the reset-gated state on the recurrent path only.
  std::vector<double> cand(width);
  for (std::size_t i = 0; i < width; ++i) {
    double s = g.b_cand(0, i);
    for (std::size_t j = 0; j < x.size(); ++j) s += g.w_cand(i, j) * x[j];
    for (std::size_t j = 0; j < width; ++j) s += g.u_cand(i, j) * gated[j];
    cand[i] = std::tanh(s);
  }
  std::vector<double> out(width);
  for (std::size_t i = 0; i < width; ++i) {
    const double z = logistic(z_pre[i]);
    out[i] = h[i] + z * (cand[i] - h[i]);
  }
  return out;
}

Matrix oracle_encode(const std::vector<int>& tokens, const ModelParams& params) {
  const std::size_t n = tokens.size();
  const std::size_t width = params.gru_fwd.u_update.rows();
  std::vector<std::vector<double>> xs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = params.embedding.row(static_cast<std::size_t>(tokens[i]));
    xs[i].assign(row.begin(), row.end());
  }
  std::vector<std::vector<double>> fwd(n), bwd(n);
  std::vector<double> h(width, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    h = oracle_gru_step(xs[i], h, params.gru_fwd);
    fwd[i] = h;
  }
  h.assign(width, 0.0);
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t i = n - 1 - step;
    h = oracle_gru_step(xs[i], h, params.gru_bwd);
    bwd[i] = h;
  }
  Matrix out(n, width);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < width; ++c) out(i, c) = 0.5 * (fwd[i][c] + bwd[i][c]);
  }
  return out;
}

}  // namespace

TEST_SUITE("encoders") {

TEST_CASE("init_params draws within the documented ranges") {
  const ModelDims dims = tiny_dims();
  const ModelParams params = tiny_params();
  CHECK(params.w_proj.rows() == dims.hidden);
  CHECK(params.w_proj.cols() == dims.raw_dim);
  CHECK(params.embedding.rows() == dims.vocab);
  CHECK(params.embedding.cols() == dims.embed);

  const double proj_bound =
      std::sqrt(6.0 / static_cast<double>(dims.raw_dim + dims.hidden));
  for (double v : params.w_proj.values()) {
    CHECK(std::abs(v) <= proj_bound);
  }
  for (double v : params.b_proj.values()) CHECK(v == 0.0);
  for (double v : params.gru_fwd.b_update.values()) CHECK(v == 0.0);
  for (double v : params.embedding.values()) CHECK(std::abs(v) <= 0.1);

  const ModelDims round = dims_of(params);
  CHECK(round.raw_dim == dims.raw_dim);
  CHECK(round.hidden == dims.hidden);
  CHECK(round.embed == dims.embed);
  CHECK(round.vocab == dims.vocab);
}

TEST_CASE("entries exposes every parameter exactly once") {
  ModelParams params = tiny_params();
  const auto entries = params.entries();
  CHECK(entries.size() == 21);
  CHECK(entries[0].first == "w_proj");
  CHECK(entries[1].first == "b_proj");
  CHECK(entries[2].first == "embedding");
  std::size_t total = 0;
  for (const auto& [name, matrix] : entries) {
    CHECK(!name.empty());
    total += matrix->size();
  }
  std::size_t expected = params.w_proj.size() + params.b_proj.size() +
                         params.embedding.size();
  for (const GruParams* g : {&params.gru_fwd, &params.gru_bwd}) {
    expected += g->w_update.size() + g->w_reset.size() + g->w_cand.size() +
                g->u_update.size() + g->u_reset.size() + g->u_cand.size() +
                g->b_update.size() + g->b_reset.size() + g->b_cand.size();
  }
  CHECK(total == expected);
}

TEST_CASE("projection with an identity map returns the features plus bias") {
  ModelParams params = tiny_params();
  params.w_proj = Matrix::identity(4);
  params.b_proj = Matrix(1, 4, {0.5, -1.0, 0.0, 2.0});
  const Matrix features(2, 4, {1, 2, 3, 4, 5, 6, 7, 8});
  const Matrix projected = project_regions(features, params);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(projected(r, c) == features(r, c) + params.b_proj(0, c));
    }
  }
  CHECK_THROWS_AS(project_regions(Matrix(2, 9), params), DimensionError);
}

TEST_CASE("embedding lookup copies rows and validates indices") {
  const ModelParams params = tiny_params();
  const std::vector<int> tokens{3, 0, 6, 3};
  const Matrix embedded = embed_words(tokens, params);
  REQUIRE(embedded.rows() == 4);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto expected = params.embedding.row(static_cast<std::size_t>(tokens[i]));
    for (std::size_t c = 0; c < embedded.cols(); ++c) {
      CHECK(embedded(i, c) == expected[c]);
    }
  }
  CHECK_THROWS_AS(embed_words({7}, params), VocabError);
  CHECK_THROWS_AS(embed_words({-1}, params), VocabError);
  CHECK_THROWS_AS(embed_words({}, params), DomainError);
}

TEST_CASE("scalar GRU step matches a frozen hand computation") {
  const GruParams gates =
      scalar_gates(0.5, -0.3, 0.1, 0.8, 0.2, -0.1, 1.0, 0.7, 0.05);
  const Matrix h = gru_step(Matrix(1, 1, {0.3}), Matrix(1, 1, {0.2}), gates);
  CHECK(h(0, 0) == doctest::Approx(0.3106813604170812443).epsilon(1e-13));
}

TEST_CASE("a fully closed update gate carries the state through unchanged") {
  GruParams gates = scalar_gates(0.4, 0.6, -1000.0, 0.8, 0.2, -0.1, 1.0, 0.7, 0.05);
  const Matrix h_prev(1, 1, {0.731});
  const Matrix h = gru_step(Matrix(1, 1, {2.5}), h_prev, gates);
  CHECK(h(0, 0) == h_prev(0, 0));
}

TEST_CASE("all-zero parameters keep the hidden state at zero") {
  ModelDims dims = tiny_dims();
  ModelParams params;
  params.w_proj = Matrix(dims.hidden, dims.raw_dim);
  params.b_proj = Matrix(1, dims.hidden);
  params.embedding = Matrix(dims.vocab, dims.embed);
  for (GruParams* g : {&params.gru_fwd, &params.gru_bwd}) {
    g->w_update = g->w_reset = g->w_cand = Matrix(dims.hidden, dims.embed);
    g->u_update = g->u_reset = g->u_cand = Matrix(dims.hidden, dims.hidden);
    g->b_update = g->b_reset = g->b_cand = Matrix(1, dims.hidden);
  }
  const Matrix encoded = encode_sentence({1, 2, 3}, params);
  for (double v : encoded.values()) CHECK(v == 0.0);
}

TEST_CASE("encode_sentence matches an independent loop oracle") {
  const ModelParams params = tiny_params(23);
  const std::vector<int> tokens{2, 5, 0, 4, 4, 1};
  const Matrix got = encode_sentence(tokens, params);
  const Matrix want = oracle_encode(tokens, params);
  REQUIRE(got.same_shape(want));
  for (std::size_t r = 0; r < got.rows(); ++r) {
    for (std::size_t c = 0; c < got.cols(); ++c) {
      CHECK(got(r, c) == doctest::Approx(want(r, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("palindromic sentences encode symmetrically") {
  // Mirror symmetry holds only when the two scan directions share gates:
  // then the forward state at i equals the backward state at its mirror.
  ModelParams params = tiny_params(29);
  params.gru_bwd = params.gru_fwd;
  const std::vector<int> tokens{1, 4, 2, 4, 1};
  const Matrix encoded = encode_sentence(tokens, params);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t mirror = tokens.size() - 1 - i;
    for (std::size_t c = 0; c < encoded.cols(); ++c) {
      CHECK(encoded(i, c) == encoded(mirror, c));
    }
  }
}

TEST_CASE("reversing the sentence reverses the encoded rows") {
  // With tied gates the two scans swap roles under reversal, so row i of the
  // original encoding equals row n-1-i of the reversed one bit for bit.
  ModelParams params = tiny_params(31);
  params.gru_bwd = params.gru_fwd;
  const std::vector<int> tokens{3, 1, 5, 0, 2};
  std::vector<int> reversed(tokens.rbegin(), tokens.rend());
  const Matrix fwd = encode_sentence(tokens, params);
  const Matrix rev = encode_sentence(reversed, params);
  REQUIRE(fwd.same_shape(rev));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t mirror = tokens.size() - 1 - i;
    for (std::size_t c = 0; c < fwd.cols(); ++c) {
      CHECK(fwd(i, c) == rev(mirror, c));
    }
  }
}

TEST_CASE("a single-token sentence equals its unidirectional encoding") {
  const ModelParams params = tiny_params(37);
  const Matrix bi = encode_sentence({4}, params);
  const Matrix uni = encode_sentence_unidirectional({4}, params);
  // The forward and backward scans coincide on one token only when the two
  // directions share parameters, so compare against the forward gates alone.
  const Matrix x = embed_words({4}, params);
  const Matrix fwd = gru_step(x, Matrix(1, bi.cols()), params.gru_fwd);
  const Matrix bwd = gru_step(x, Matrix(1, bi.cols()), params.gru_bwd);
  for (std::size_t c = 0; c < bi.cols(); ++c) {
    CHECK(uni(0, c) == fwd(0, c));
    CHECK(bi(0, c) == 0.5 * (fwd(0, c) + bwd(0, c)));
  }
}

TEST_CASE("unidirectional encoding is the forward scan") {
  const ModelParams params = tiny_params(41);
  const std::vector<int> tokens{2, 6, 1};
  const Matrix uni = encode_sentence_unidirectional(tokens, params);
  Matrix h(1, uni.cols());
  const Matrix embedded = embed_words(tokens, params);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Matrix x(1, embedded.cols());
    for (std::size_t c = 0; c < embedded.cols(); ++c) x(0, c) = embedded(i, c);
    h = gru_step(x, h, params.gru_fwd);
    for (std::size_t c = 0; c < uni.cols(); ++c) CHECK(uni(i, c) == h(0, c));
  }
}

TEST_CASE("tape encoders reproduce the plain encoders exactly") {
  const ModelParams params = tiny_params(43);
  const std::vector<int> tokens{5, 2, 2, 6};
  Tape tape;
  const ParamVars vars = bind_params(tape, params);

  const Matrix features(3, 5, {0.1, -0.2, 0.3, 0.4, -0.5,
                               1.0, 0.5, -1.0, 0.25, 0.75,
                               -0.3, 0.6, -0.9, 1.2, 0.0});
  const Matrix tape_proj =
      tape.value(project_regions_node(tape, tape.input(features), vars));
  const Matrix plain_proj = project_regions(features, params);
  for (std::size_t r = 0; r < plain_proj.rows(); ++r) {
    for (std::size_t c = 0; c < plain_proj.cols(); ++c) {
      CHECK(tape_proj(r, c) == plain_proj(r, c));
    }
  }

  const Matrix tape_enc = tape.value(encode_sentence_node(tape, tokens, vars));
  const Matrix plain_enc = encode_sentence(tokens, params);
  REQUIRE(tape_enc.same_shape(plain_enc));
  for (std::size_t r = 0; r < plain_enc.rows(); ++r) {
    for (std::size_t c = 0; c < plain_enc.cols(); ++c) {
      CHECK(tape_enc(r, c) == plain_enc(r, c));
    }
  }

  const Matrix tape_uni =
      tape.value(encode_sentence_node(tape, tokens, vars, false));
  const Matrix plain_uni = encode_sentence_unidirectional(tokens, params);
  for (std::size_t r = 0; r < plain_uni.rows(); ++r) {
    for (std::size_t c = 0; c < plain_uni.cols(); ++c) {
      CHECK(tape_uni(r, c) == plain_uni(r, c));
    }
  }
}

TEST_CASE("collect_grads returns one gradient per parameter in order") {
  const ModelParams params = tiny_params(47);
  Tape tape;
  const ParamVars vars = bind_params(tape, params);
  const Var encoded = encode_sentence_node(tape, {1, 3}, vars);
  tape.backward(tape.sum_all(encoded));
  const std::vector<Matrix> grads = collect_grads(tape, vars);
  const auto entries = params.entries();
  REQUIRE(grads.size() == entries.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    CHECK(grads[i].same_shape(*entries[i].second));
  }
  // The projection never fed the loss, so its gradient must be zero.
  for (double v : grads[0].values()) CHECK(v == 0.0);
  // The embedding rows that were looked up must carry signal.
  double embedding_mass = 0.0;
  for (double v : grads[2].values()) embedding_mass += std::abs(v);
  CHECK(embedding_mass > 0.0);
}

TEST_CASE("model validation rejects inconsistent shapes") {
  ModelParams params = tiny_params(53);
  CHECK_NOTHROW(params.validate());
  params.b_proj = Matrix(1, 2);
  CHECK_THROWS_AS(params.validate(), DimensionError);
}

}  // TEST_SUITE
