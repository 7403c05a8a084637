#include <cmath>
#include <vector>

#include "doctest.h"
#include "xmatch/attention.hpp"
#include "xmatch/dataio.hpp"
#include "xmatch/encoders.hpp"
#include "xmatch/errors.hpp"
#include "xmatch/learning.hpp"
#include "xmatch/matrix.hpp"
#include "xmatch/rng.hpp"
#include "xmatch/tape.hpp"

using namespace xmatch;

namespace {

Matrix random_scores(Rng& rng, std::size_t b, bool quantized = false) {
  Matrix s(b, b);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t c = 0; c < b; ++c) {
      const double v = rng.uniform(-1.0, 1.0);
      // Coarse buckets force plenty of exact ties.
      s(r, c) = quantized ? std::round(v * 4.0) / 4.0 : v;
    }
  }
  return s;
}

LossConfig loss_config(LossMode mode, double margin = 0.2) {
  LossConfig cfg;
  cfg.margin = margin;
  cfg.mode = mode;
  return cfg;
}

// Brute-force mining with the documented tie-break toward the lower index.
HardNegatives oracle_mine(const Matrix& s) {
  const std::size_t b = s.rows();
  HardNegatives out;
  out.hardest_sentence.resize(b);
  out.hardest_image.resize(b);
  for (std::size_t a = 0; a < b; ++a) {
    int best = -1;
    for (std::size_t c = 0; c < b; ++c) {
      if (c == a) continue;
      if (best < 0 || s(a, c) > s(a, static_cast<std::size_t>(best))) {
        best = static_cast<int>(c);
      }
    }
    out.hardest_sentence[a] = best;
  }
  for (std::size_t a = 0; a < b; ++a) {
    int best = -1;
    for (std::size_t r = 0; r < b; ++r) {
      if (r == a) continue;
      if (best < 0 || s(r, a) > s(static_cast<std::size_t>(best), a)) {
        best = static_cast<int>(r);
      }
    }
    out.hardest_image[a] = best;
  }
  return out;
}

struct TinyBatch {
  std::vector<Matrix> features;
  std::vector<std::vector<int>> sentences;
  ModelParams params;
  AttentionConfig attention;
};

TinyBatch make_batch(std::size_t b, std::uint64_t seed) {
  TinyBatch batch;
  ModelDims dims;
  dims.raw_dim = 5;
  dims.hidden = 4;
  dims.embed = 3;
  dims.vocab = 9;
  Rng rng(seed);
  batch.params = init_params(dims, rng);
  for (std::size_t i = 0; i < b; ++i) {
    Matrix f(2 + i % 2, dims.raw_dim);
    for (double& v : f.values()) v = rng.normal();
    batch.features.push_back(std::move(f));
    std::vector<int> tokens;
    const std::size_t len = 1 + rng.index(4);
    for (std::size_t t = 0; t < len; ++t) {
      tokens.push_back(static_cast<int>(rng.index(dims.vocab)));
    }
    batch.sentences.push_back(std::move(tokens));
  }
  batch.attention.direction = Direction::ImageText;
  batch.attention.pooling = Pooling::AVG;
  batch.attention.lambda1 = 4.0;
  return batch;
}

}  // namespace

TEST_SUITE("learning") {

TEST_CASE("both losses equal 0.9 on the frozen two-pair grid") {
  const Matrix s(2, 2, {0.6, 0.5, 0.55, 0.4});
  CHECK(triplet_loss_hard(s, loss_config(LossMode::HardestNegatives)) ==
        doctest::Approx(0.9).epsilon(1e-14));
  CHECK(triplet_loss_all(s, loss_config(LossMode::AllNegatives)) ==
        doctest::Approx(0.9).epsilon(1e-14));
}

TEST_CASE("hinge terms vanish once the positive clears every negative") {
  // The positives beat all negatives by more than the margin.
  const Matrix s(2, 2, {0.9, 0.1, 0.05, 0.8});
  CHECK(triplet_loss_hard(s, loss_config(LossMode::HardestNegatives)) == 0.0);
  CHECK(triplet_loss_all(s, loss_config(LossMode::AllNegatives)) == 0.0);
}

TEST_CASE("the hardest-negative loss never exceeds the all-negative loss") {
  Rng rng(61);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 2 + rng.index(5);
    const Matrix s = random_scores(rng, b);
    const double hard = triplet_loss_hard(s, loss_config(LossMode::HardestNegatives));
    const double all = triplet_loss_all(s, loss_config(LossMode::AllNegatives));
    CHECK(hard <= all + 1e-12);
    CHECK(hard >= 0.0);
  }
}

TEST_CASE("shifting every score leaves both losses unchanged") {
  Rng rng(62);
  const Matrix s = random_scores(rng, 4);
  Matrix shifted = s;
  for (double& v : shifted.values()) v += 3.25;
  CHECK(std::abs(triplet_loss_hard(s, loss_config(LossMode::HardestNegatives)) -
                 triplet_loss_hard(shifted, loss_config(LossMode::HardestNegatives))) <
        1e-12);
  CHECK(std::abs(triplet_loss_all(s, loss_config(LossMode::AllNegatives)) -
                 triplet_loss_all(shifted, loss_config(LossMode::AllNegatives))) <
        1e-12);
}

TEST_CASE("mining matches a brute-force oracle, ties included") {
  Rng rng(63);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 2 + rng.index(6);
    const Matrix s = random_scores(rng, b, /*quantized=*/true);
    const HardNegatives got = mine_hardest(s);
    const HardNegatives want = oracle_mine(s);
    REQUIRE(got.hardest_sentence.size() == b);
    REQUIRE(got.hardest_image.size() == b);
    for (std::size_t a = 0; a < b; ++a) {
      CHECK(got.hardest_sentence[a] == want.hardest_sentence[a]);
      CHECK(got.hardest_image[a] == want.hardest_image[a]);
    }
  }
}

TEST_CASE("degenerate batches") {
  CHECK(triplet_loss_all(Matrix(1, 1, {0.3}), loss_config(LossMode::AllNegatives)) ==
        0.0);
  CHECK_THROWS_AS(
      triplet_loss_hard(Matrix(1, 1, {0.3}), loss_config(LossMode::HardestNegatives)),
      DomainError);
  CHECK_THROWS_AS(mine_hardest(Matrix(1, 1, {0.3})), DomainError);
}

TEST_CASE("gradient clipping rescales only past the threshold") {
  // Four entries of 2 across two matrices: global norm 4, rescaled to norm 2.
  std::vector<Matrix> grads;
  grads.push_back(Matrix(1, 2, {0.0, 2.0}));
  grads.push_back(Matrix(1, 3, {2.0, 2.0, 2.0}));
  const double pre = clip_gradients(grads, 2.0);
  CHECK(pre == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(grads[0](0, 1) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(grads[1](0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  double norm_sq = 0.0;
  for (const Matrix& g : grads) {
    for (double v : g.values()) norm_sq += v * v;
  }
  CHECK(std::sqrt(norm_sq) == doctest::Approx(2.0).epsilon(1e-12));

  // Below the threshold nothing moves.
  std::vector<Matrix> small;
  small.push_back(Matrix(1, 2, {0.3, -0.4}));
  const double small_pre = clip_gradients(small, 2.0);
  CHECK(small_pre == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(small[0](0, 0) == 0.3);
  CHECK(small[0](0, 1) == -0.4);

  std::vector<Matrix> broken;
  broken.push_back(Matrix(1, 1, {1.0}));
  broken[0](0, 0) = INFINITY;
  CHECK_THROWS_AS(clip_gradients(broken, 2.0), TrainingError);
}

TEST_CASE("clipping preserves direction") {
  Rng rng(64);
  std::vector<Matrix> grads;
  grads.push_back(Matrix(2, 3));
  for (double& v : grads[0].values()) v = rng.normal() * 10.0;
  const std::vector<Matrix> before = grads;
  const double pre = clip_gradients(grads, 1.0);
  REQUIRE(pre > 1.0);
  for (std::size_t i = 0; i < grads[0].size(); ++i) {
    CHECK(grads[0].values()[i] ==
          doctest::Approx(before[0].values()[i] / pre).epsilon(1e-12));
  }
}

TEST_CASE("one Adam step from a fresh state matches the frozen constant") {
  ModelDims dims;
  dims.raw_dim = 2;
  dims.hidden = 2;
  dims.embed = 2;
  dims.vocab = 3;
  Rng rng(65);
  ModelParams params = init_params(dims, rng);
  params.w_proj(0, 0) = 0.5;
  const ModelParams before = params;

  OptimizerState state = init_optimizer(params);
  std::vector<Matrix> grads;
  for (const auto& [name, matrix] : params.entries()) {
    grads.push_back(Matrix(matrix->rows(), matrix->cols()));
  }
  grads[0](0, 0) = 1.0;  // only w_proj(0,0) receives signal

  OptimizerConfig config;
  adam_step(state, params, grads, 0.001, config);
  CHECK(params.w_proj(0, 0) == doctest::Approx(0.4990000000100000).epsilon(1e-13));
  CHECK(state.step == 1);

  // Parameters with zero gradient stay bitwise identical.
  const auto now = params.entries();
  const auto then = before.entries();
  for (std::size_t e = 1; e < now.size(); ++e) {
    for (std::size_t i = 0; i < now[e].second->size(); ++i) {
      CHECK(now[e].second->values()[i] == then[e].second->values()[i]);
    }
  }
}

TEST_CASE("adam rejects non-finite gradients and mismatched shapes") {
  ModelDims dims;
  dims.raw_dim = 2;
  dims.hidden = 2;
  dims.embed = 2;
  dims.vocab = 3;
  Rng rng(66);
  ModelParams params = init_params(dims, rng);
  OptimizerState state = init_optimizer(params);
  std::vector<Matrix> grads;
  for (const auto& [name, matrix] : params.entries()) {
    grads.push_back(Matrix(matrix->rows(), matrix->cols()));
  }
  OptimizerConfig config;
  grads[0](0, 0) = INFINITY;
  CHECK_THROWS_AS(adam_step(state, params, grads, 0.001, config), TrainingError);
  grads[0](0, 0) = 0.0;
  grads.pop_back();
  CHECK_THROWS_AS(adam_step(state, params, grads, 0.001, config), DimensionError);
}

TEST_CASE("the learning rate decays once at the configured epoch") {
  OptimizerConfig config;
  config.learning_rate = 0.002;
  config.decay_epoch = 10;
  config.decay_factor = 0.1;
  CHECK(config.rate_at(0) == 0.002);
  CHECK(config.rate_at(9) == 0.002);
  CHECK(config.rate_at(10) == doctest::Approx(0.0002).epsilon(1e-14));
  CHECK(config.rate_at(19) == doctest::Approx(0.0002).epsilon(1e-14));
}

TEST_CASE("batch_scores fills the grid pairwise") {
  const TinyBatch batch = make_batch(3, 71);
  const Matrix grid =
      batch_scores(batch.features, batch.sentences, batch.params, batch.attention);
  REQUIRE(grid.rows() == 3);
  REQUIRE(grid.cols() == 3);
  for (std::size_t a = 0; a < 3; ++a) {
    const Matrix regions = project_regions(batch.features[a], batch.params);
    for (std::size_t b = 0; b < 3; ++b) {
      const Matrix words = encode_sentence(batch.sentences[b], batch.params);
      CHECK(grid(a, b) == pair_score(regions, words, batch.attention));
    }
  }
}

TEST_CASE("the tape loss agrees with the plain loss in both modes") {
  for (std::uint64_t seed : {81u, 82u, 83u}) {
    const TinyBatch batch = make_batch(4, seed);
    const Matrix grid =
        batch_scores(batch.features, batch.sentences, batch.params, batch.attention);
    for (LossMode mode : {LossMode::HardestNegatives, LossMode::AllNegatives}) {
      const LossConfig cfg = loss_config(mode);
      const double plain = mode == LossMode::HardestNegatives
                               ? triplet_loss_hard(grid, cfg)
                               : triplet_loss_all(grid, cfg);
      Tape tape;
      const ParamVars vars = bind_params(tape, batch.params);
      const Var loss = batch_loss_node(tape, vars, batch.features, batch.sentences,
                                       cfg, batch.attention);
      CHECK(std::abs(tape.value(loss)(0, 0) - plain) < 1e-12);
    }
  }
}

TEST_CASE("the tape loss backpropagates into every parameter family") {
  const TinyBatch batch = make_batch(4, 84);
  Tape tape;
  const ParamVars vars = bind_params(tape, batch.params);
  const Var loss = batch_loss_node(tape, vars, batch.features, batch.sentences,
                                   loss_config(LossMode::HardestNegatives),
                                   batch.attention);
  REQUIRE(tape.value(loss)(0, 0) > 0.0);
  tape.backward(loss);
  const std::vector<Matrix> grads = collect_grads(tape, vars);
  double proj_mass = 0.0, embed_mass = 0.0, gru_mass = 0.0;
  for (double v : grads[0].values()) proj_mass += std::abs(v);
  for (double v : grads[2].values()) embed_mass += std::abs(v);
  for (std::size_t e = 3; e < grads.size(); ++e) {
    for (double v : grads[e].values()) gru_mass += std::abs(v);
  }
  CHECK(proj_mass > 0.0);
  CHECK(embed_mass > 0.0);
  CHECK(gru_mass > 0.0);
}

TEST_CASE("single-pair batches degrade as documented") {
  const TinyBatch batch = make_batch(1, 85);
  Tape tape;
  const ParamVars vars = bind_params(tape, batch.params);
  const Var zero = batch_loss_node(tape, vars, batch.features, batch.sentences,
                                   loss_config(LossMode::AllNegatives), batch.attention);
  CHECK(tape.value(zero)(0, 0) == 0.0);
  CHECK_THROWS_AS(batch_loss_node(tape, vars, batch.features, batch.sentences,
                                  loss_config(LossMode::HardestNegatives),
                                  batch.attention),
                  DomainError);
}

TEST_CASE("training config validation") {
  TrainConfig config;
  config.batch_size = 1;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = TrainConfig{};
  config.threads = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = TrainConfig{};
  CHECK_NOTHROW(config.validate());
}

TEST_CASE("a short training run improves the loss deterministically") {
  SyntheticSpec spec;
  spec.concepts = 6;
  spec.images = 20;
  spec.regions = 3;
  spec.captions_per_image = 2;
  spec.raw_dim = 8;
  spec.seed = 3;
  const SyntheticDataset synth = generate_synthetic(spec);
  const SplitIndices splits = split_dataset(20, SplitCounts{16, 4, 0}, 3);

  ModelDims dims;
  dims.raw_dim = 8;
  dims.hidden = 8;
  dims.embed = 4;
  dims.vocab = synth.dataset.vocab.size();

  TrainConfig config;
  config.epochs = 3;
  config.batch_size = 8;
  config.seed = 12;
  config.attention.direction = Direction::ImageText;
  config.attention.pooling = Pooling::AVG;
  config.attention.lambda1 = 4.0;
  config.optimizer.learning_rate = 0.005;

  auto run = [&]() {
    Rng rng(config.seed);
    ModelParams initial = init_params(dims, rng);
    return train(synth.dataset, splits, std::move(initial), config);
  };
  const TrainResult first = run();
  const TrainResult second = run();

  REQUIRE(first.history.size() == 3);
  CHECK(first.best_epoch >= 0);
  CHECK(first.best_epoch < 3);
  for (const EpochRecord& r : first.history) {
    CHECK(std::isfinite(r.train_loss));
    CHECK(r.lr == 0.005);
  }
  CHECK(first.history.back().train_loss < first.history.front().train_loss);

  // Bit-for-bit repeatability: same seeds, same history, same parameters.
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(first.history[e].train_loss == second.history[e].train_loss);
    CHECK(first.history[e].recall_sum == second.history[e].recall_sum);
  }
  const auto a = first.params.entries();
  const auto b = second.params.entries();
  for (std::size_t e = 0; e < a.size(); ++e) {
    REQUIRE(a[e].second->size() == b[e].second->size());
    for (std::size_t i = 0; i < a[e].second->size(); ++i) {
      CHECK(a[e].second->values()[i] == b[e].second->values()[i]);
    }
  }

  // Validation recalls were measured on the four held-out images.
  CHECK(first.history[0].val_sentence.queries == 4);
}

}  // TEST_SUITE
