#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xmatch/attention.hpp"
#include "xmatch/dataio.hpp"
#include "xmatch/encoders.hpp"
#include "xmatch/evalcore.hpp"
#include "xmatch/matrix.hpp"

namespace xmatch {

enum class LossMode { AllNegatives, HardestNegatives };

struct LossConfig {
  double margin = 0.2;
  LossMode mode = LossMode::HardestNegatives;

  void validate() const;
};

// Scores of every (image a, sentence b) pair in an aligned batch; the
// diagonal holds the positive pairs.
Matrix batch_scores(const std::vector<Matrix>& image_features,
                    const std::vector<std::vector<int>>& sentences,
                    const ModelParams& params, const AttentionConfig& config);

// Hinge terms summed over every in-batch negative, 0 when B < 2.
double triplet_loss_all(const Matrix& scores, const LossConfig& config);

struct HardNegatives {
  std::vector<int> hardest_sentence;  // per image: argmax_{b != a} S(a, b)
  std::vector<int> hardest_image;     // per sentence: argmax_{m != a} S(m, a)
};

// Argmax sweeps with ties broken by lowest index; B >= 2 required.
HardNegatives mine_hardest(const Matrix& scores);

// Hinge terms against the hardest in-batch negatives only; B >= 2 required.
double triplet_loss_hard(const Matrix& scores, const LossConfig& config);

struct OptimizerConfig {
  double learning_rate = 0.002;
  int decay_epoch = 10;       // epochs before the rate drops
  double decay_factor = 0.1;
  double clip_norm = 2.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  double rate_at(int epoch) const;
};

struct OptimizerState {
  int step = 0;
  std::vector<Matrix> m;  // first moments, entries() order
  std::vector<Matrix> v;  // second moments
};

OptimizerState init_optimizer(const ModelParams& params);

// Scales gradients to global L2 norm clip_norm when they exceed it;
// returns the pre-clip norm.
double clip_gradients(std::vector<Matrix>& grads, double clip_norm);

// One Adam update with bias correction, in place. Gradients must align with
// params.entries(); non-finite gradients raise a training error.
void adam_step(OptimizerState& state, ModelParams& params,
               const std::vector<Matrix>& grads, double lr,
               const OptimizerConfig& config);

// Differentiable batch loss: encodes the batch on the tape, scores all
// pairs, and assembles the configured triplet loss. Hard-negative indices
// are mined from the forward values and match mine_hardest exactly.
Var batch_loss_node(Tape& tape, const ParamVars& params,
                    const std::vector<Matrix>& image_features,
                    const std::vector<std::vector<int>>& sentences,
                    const LossConfig& loss, const AttentionConfig& attention);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 7;
  int threads = 1;  // validation grids only; results identical for any value
  LossConfig loss;
  AttentionConfig attention;
  OptimizerConfig optimizer;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean batch loss over the epoch
  RecallReport val_sentence;
  RecallReport val_image;
  double recall_sum = 0.0;  // all six validation recalls added up
};

struct TrainResult {
  ModelParams params;  // parameters at the best validation epoch
  std::vector<EpochRecord> history;
  int best_epoch = -1;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Epoch loop: shuffled distinct-image batches (captions rotate per epoch),
// tape gradients, clipping, Adam, per-epoch validation recalls. Picks the
// checkpoint with the highest recall sum; deterministic given the seed.
TrainResult train(const Dataset& dataset, const SplitIndices& splits,
                  ModelParams initial, const TrainConfig& config,
                  const EpochCallback& on_epoch = nullptr);

}  // namespace xmatch
