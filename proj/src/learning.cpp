#include "xmatch/learning.hpp"

#include <algorithm>
#include <cmath>

#include "xmatch/rng.hpp"

namespace xmatch {

void LossConfig::validate() const {
  if (margin < 0.0) throw ConfigError("loss: margin must be nonnegative");
}

Matrix batch_scores(const std::vector<Matrix>& image_features,
                    const std::vector<std::vector<int>>& sentences,
                    const ModelParams& params, const AttentionConfig& config) {
  if (image_features.size() != sentences.size()) {
    throw DimensionError("batch_scores: " + std::to_string(image_features.size()) +
                         " images vs " + std::to_string(sentences.size()) +
                         " sentences");
  }
  if (image_features.empty()) throw DomainError("batch_scores: empty batch");
  config.validate();

  const std::size_t batch = image_features.size();
  std::vector<Matrix> regions(batch);
  std::vector<Matrix> words(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    regions[i] = project_regions(image_features[i], params);
    words[i] = encode_sentence(sentences[i], params);
  }
  Matrix scores(batch, batch);
  for (std::size_t a = 0; a < batch; ++a) {
    for (std::size_t b = 0; b < batch; ++b) {
      scores(a, b) = pair_score(regions[a], words[b], config);
    }
  }
  return scores;
}

namespace {

void require_square(const Matrix& scores, const char* who) {
  if (scores.rows() != scores.cols()) {
    throw DimensionError(std::string(who) + ": score matrix must be square, got " +
                         std::to_string(scores.rows()) + "x" +
                         std::to_string(scores.cols()));
  }
  if (!scores.all_finite()) {
    throw NumericError(std::string(who) + ": non-finite score");
  }
}

double hinge(double negative, double positive, double margin) {
  const double t = (negative - positive) + margin;
  return t > 0.0 ? t : 0.0;
}

}  // namespace

double triplet_loss_all(const Matrix& scores, const LossConfig& config) {
  require_square(scores, "triplet_loss_all");
  config.validate();
  const std::size_t batch = scores.rows();
  if (batch < 2) return 0.0;

  double loss = 0.0;
  for (std::size_t a = 0; a < batch; ++a) {
    const double positive = scores(a, a);
    for (std::size_t b = 0; b < batch; ++b) {
      if (b == a) continue;
      loss += hinge(scores(a, b), positive, config.margin);
    }
    for (std::size_t b = 0; b < batch; ++b) {
      if (b == a) continue;
      loss += hinge(scores(b, a), positive, config.margin);
    }
  }
  return loss;
}

HardNegatives mine_hardest(const Matrix& scores) {
  require_square(scores, "mine_hardest");
  const std::size_t batch = scores.rows();
  if (batch < 2) throw DomainError("mine_hardest: need a batch of at least 2");

  HardNegatives out;
  out.hardest_sentence.resize(batch);
  out.hardest_image.resize(batch);
  for (std::size_t a = 0; a < batch; ++a) {
    std::size_t best_sentence = a == 0 ? 1 : 0;
    std::size_t best_image = best_sentence;
    for (std::size_t b = 0; b < batch; ++b) {
      if (b == a) continue;
      if (scores(a, b) > scores(a, best_sentence)) best_sentence = b;
      if (scores(b, a) > scores(best_image, a)) best_image = b;
    }
    out.hardest_sentence[a] = static_cast<int>(best_sentence);
    out.hardest_image[a] = static_cast<int>(best_image);
  }
  return out;
}

double triplet_loss_hard(const Matrix& scores, const LossConfig& config) {
  require_square(scores, "triplet_loss_hard");
  config.validate();
  const HardNegatives mined = mine_hardest(scores);

  double loss = 0.0;
  for (std::size_t a = 0; a < scores.rows(); ++a) {
    const double positive = scores(a, a);
    const auto ts = static_cast<std::size_t>(mined.hardest_sentence[a]);
    const auto ti = static_cast<std::size_t>(mined.hardest_image[a]);
    loss += hinge(scores(a, ts), positive, config.margin);
    loss += hinge(scores(ti, a), positive, config.margin);
  }
  return loss;
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  if (decay_epoch < 0) throw ConfigError("optimizer: decay epoch must be nonnegative");
  if (!(decay_factor > 0.0)) throw ConfigError("optimizer: decay factor must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("optimizer: clip norm must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
}

double OptimizerConfig::rate_at(int epoch) const {
  return epoch < decay_epoch ? learning_rate : learning_rate * decay_factor;
}

OptimizerState init_optimizer(const ModelParams& params) {
  OptimizerState state;
  for (const auto& [name, m] : params.entries()) {
    state.m.emplace_back(m->rows(), m->cols());
    state.v.emplace_back(m->rows(), m->cols());
  }
  return state;
}

double clip_gradients(std::vector<Matrix>& grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ConfigError("clip_gradients: clip norm must be positive");
  double sum_sq = 0.0;
  for (const Matrix& g : grads) {
    for (double v : g.values()) sum_sq += v * v;
  }
  const double norm = std::sqrt(sum_sq);
  if (!std::isfinite(norm)) {
    throw TrainingError("clip_gradients: non-finite gradient norm");
  }
  if (norm > clip_norm) {
    const double factor = clip_norm / norm;
    for (Matrix& g : grads) {
      for (double& v : g.values()) v *= factor;
    }
  }
  return norm;
}

void adam_step(OptimizerState& state, ModelParams& params,
               const std::vector<Matrix>& grads, double lr,
               const OptimizerConfig& config) {
  config.validate();
  auto entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size() ||
      state.v.size() != entries.size()) {
    throw DimensionError("adam_step: gradient/state count mismatch");
  }

  state.step += 1;
  const double bias1 = 1.0 - std::pow(config.beta1, state.step);
  const double bias2 = 1.0 - std::pow(config.beta2, state.step);

  for (std::size_t p = 0; p < entries.size(); ++p) {
    Matrix& theta = *entries[p].second;
    const Matrix& g = grads[p];
    if (!theta.same_shape(g)) {
      throw DimensionError("adam_step: gradient shape mismatch for " + entries[p].first);
    }
    if (!g.all_finite()) {
      throw TrainingError("adam_step: non-finite gradient for " + entries[p].first);
    }
    Matrix& m = state.m[p];
    Matrix& v = state.v[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g.values()[i];
      m.values()[i] = config.beta1 * m.values()[i] + (1.0 - config.beta1) * gi;
      v.values()[i] = config.beta2 * v.values()[i] + (1.0 - config.beta2) * gi * gi;
      const double m_hat = m.values()[i] / bias1;
      const double v_hat = v.values()[i] / bias2;
      theta.values()[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

Var batch_loss_node(Tape& tape, const ParamVars& params,
                    const std::vector<Matrix>& image_features,
                    const std::vector<std::vector<int>>& sentences,
                    const LossConfig& loss, const AttentionConfig& attention) {
  if (image_features.size() != sentences.size()) {
    throw DimensionError("batch_loss_node: " + std::to_string(image_features.size()) +
                         " images vs " + std::to_string(sentences.size()) +
                         " sentences");
  }
  loss.validate();
  attention.validate();
  const std::size_t batch = image_features.size();
  if (batch < 2) {
    if (loss.mode == LossMode::HardestNegatives) {
      throw DomainError("batch_loss_node: hard negatives need a batch of at least 2");
    }
    return tape.input(Matrix(1, 1));  // no negatives: constant zero loss
  }

  std::vector<Var> regions(batch);
  std::vector<Var> words(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    regions[i] = project_regions_node(tape, tape.input(image_features[i]), params);
    words[i] = encode_sentence_node(tape, sentences[i], params);
  }

  std::vector<std::vector<Var>> s(batch, std::vector<Var>(batch));
  Matrix values(batch, batch);
  for (std::size_t a = 0; a < batch; ++a) {
    for (std::size_t b = 0; b < batch; ++b) {
      s[a][b] = pair_score_node(tape, regions[a], words[b], attention);
      values(a, b) = tape.value(s[a][b])(0, 0);
    }
  }

  Var total{};
  auto accumulate = [&](Var term) {
    total = total.valid() ? tape.add(total, term) : term;
  };
  auto hinge_term = [&](Var negative, Var positive) {
    return tape.relu(tape.add_scalar(tape.sub(negative, positive), loss.margin));
  };

  if (loss.mode == LossMode::AllNegatives) {
    for (std::size_t a = 0; a < batch; ++a) {
      for (std::size_t b = 0; b < batch; ++b) {
        if (b == a) continue;
        accumulate(hinge_term(s[a][b], s[a][a]));
      }
      for (std::size_t b = 0; b < batch; ++b) {
        if (b == a) continue;
        accumulate(hinge_term(s[b][a], s[a][a]));
      }
    }
  } else {
    const HardNegatives mined = mine_hardest(values);
    for (std::size_t a = 0; a < batch; ++a) {
      const auto ts = static_cast<std::size_t>(mined.hardest_sentence[a]);
      const auto ti = static_cast<std::size_t>(mined.hardest_image[a]);
      accumulate(hinge_term(s[a][ts], s[a][a]));
      accumulate(hinge_term(s[ti][a], s[a][a]));
    }
  }
  return total;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be nonnegative");
  if (batch_size < 2) throw ConfigError("train: batch size must be at least 2");
  if (threads < 1) throw ConfigError("train: threads must be at least 1");
  loss.validate();
  attention.validate();
  optimizer.validate();
}

namespace {

struct ValSet {
  std::vector<Matrix> features;
  std::vector<std::vector<int>> sentences;
  std::vector<int> sentence_image;
};

ValSet collect_split(const Dataset& dataset, const std::vector<int>& images) {
  ValSet v;
  for (std::size_t pos = 0; pos < images.size(); ++pos) {
    const auto id = static_cast<std::size_t>(images[pos]);
    v.features.push_back(dataset.features[id]);
    for (int c : dataset.captions_of[id]) {
      v.sentences.push_back(dataset.captions[static_cast<std::size_t>(c)].tokens);
      v.sentence_image.push_back(static_cast<int>(pos));
    }
  }
  return v;
}

}  // namespace

TrainResult train(const Dataset& dataset, const SplitIndices& splits,
                  ModelParams initial, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  initial.validate();
  if (splits.train.size() < 2) {
    throw ConfigError("train: need at least 2 training images");
  }
  for (const auto* part : {&splits.train, &splits.val, &splits.test}) {
    for (int id : *part) {
      if (id < 0 || id >= static_cast<int>(dataset.image_count())) {
        throw ConfigError("train: split references image " + std::to_string(id) +
                          " outside the dataset");
      }
    }
  }

  TrainResult result;
  result.params = std::move(initial);
  ModelParams current = result.params;
  OptimizerState state = init_optimizer(current);
  const ValSet val = collect_split(dataset, splits.val);

  double best_sum = -1.0;
  Rng rng(config.seed);
  std::vector<int> order = splits.train;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.optimizer.rate_at(epoch);
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(config.batch_size));

      std::vector<Matrix> features;
      std::vector<std::vector<int>> sentences;
      for (std::size_t p = start; p < end; ++p) {
        const auto id = static_cast<std::size_t>(order[p]);
        const std::vector<int>& caps = dataset.captions_of[id];
        if (caps.empty()) continue;  // image with no captions cannot form a pair
        const std::size_t pick =
            (static_cast<std::size_t>(epoch) + id) % caps.size();
        features.push_back(dataset.features[id]);
        sentences.push_back(
            dataset.captions[static_cast<std::size_t>(caps[pick])].tokens);
      }
      if (features.size() < 2) continue;  // not enough pairs for negatives

      try {
        Tape tape;
        const ParamVars vars = bind_params(tape, current);
        const Var loss =
            batch_loss_node(tape, vars, features, sentences, config.loss,
                            config.attention);
        loss_sum += tape.value(loss)(0, 0);
        tape.backward(loss);
        std::vector<Matrix> grads = collect_grads(tape, vars);
        clip_gradients(grads, config.optimizer.clip_norm);
        adam_step(state, current, grads, lr, config.optimizer);
      } catch (const NumericError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batches) + ": " + e.what());
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batches) + ": " + e.what());
      }
      ++batches;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;
    record.train_loss = batches == 0 ? 0.0 : loss_sum / static_cast<double>(batches);

    if (!val.features.empty()) {
      const ScoreGrid grid = score_grid(val.features, val.sentences,
                                        val.sentence_image, current,
                                        config.attention, config.threads);
      record.val_sentence = recall_report(grid, RetrievalDirection::SentenceRetrieval);
      record.val_image = recall_report(grid, RetrievalDirection::ImageRetrieval);
      record.recall_sum = record.val_sentence.r1 + record.val_sentence.r5 +
                          record.val_sentence.r10 + record.val_image.r1 +
                          record.val_image.r5 + record.val_image.r10;
    } else {
      record.val_sentence.note = "no validation split";
      record.val_image.direction = RetrievalDirection::ImageRetrieval;
      record.val_image.note = "no validation split";
    }

    result.history.push_back(record);
    if (on_epoch) on_epoch(record);

    // Highest validation recall sum wins, earliest epoch on ties; without a
    // validation split the final parameters are kept.
    if (record.recall_sum > best_sum || val.features.empty()) {
      best_sum = record.recall_sum;
      result.params = current;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace xmatch
