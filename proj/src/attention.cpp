#include "xmatch/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace xmatch {

namespace {

void require_pair(const Matrix& regions, const Matrix& words, const char* who) {
  if (regions.empty() || words.empty()) {
    throw DomainError(std::string(who) + ": empty regions or words");
  }
  if (regions.cols() != words.cols()) {
    throw DimensionError(std::string(who) + ": embedding width " +
                         std::to_string(regions.cols()) + " vs " +
                         std::to_string(words.cols()));
  }
}

Matrix truncate_regions(const Matrix& regions, const std::optional<int>& max_regions) {
  if (!max_regions) return regions;
  const auto cap = static_cast<std::size_t>(*max_regions);
  return regions.top_rows(std::min(cap, regions.rows()));
}

}  // namespace

void AttentionConfig::validate() const {
  if (!(lambda1 > 0.0)) throw ConfigError("attention: lambda1 must be positive");
  if (pooling == Pooling::LSE && !(lambda2 > 0.0)) {
    throw ConfigError("attention: lambda2 must be positive for LSE pooling");
  }
  if (max_regions && *max_regions < 1) {
    throw ConfigError("attention: max_regions must be at least 1");
  }
}

Matrix similarity_matrix(const Matrix& regions, const Matrix& words) {
  require_pair(regions, words, "similarity_matrix");
  Matrix s(regions.rows(), words.rows());
  for (std::size_t i = 0; i < regions.rows(); ++i) {
    for (std::size_t j = 0; j < words.rows(); ++j) {
      s(i, j) = cosine(regions.row(i), words.row(j));
    }
  }
  return s;
}

Matrix threshold_normalize(const Matrix& sim, NormalizeAxis axis) {
  if (sim.empty()) throw DomainError("threshold_normalize: empty matrix");
  const Matrix clamped = relu(sim);
  Matrix out(sim.rows(), sim.cols());
  if (axis == NormalizeAxis::OverWords) {
    for (std::size_t r = 0; r < clamped.rows(); ++r) {
      const std::vector<double> row = l2_normalize(clamped.row(r));
      for (std::size_t c = 0; c < clamped.cols(); ++c) out(r, c) = row[c];
    }
  } else {
    std::vector<double> column(clamped.rows());
    for (std::size_t c = 0; c < clamped.cols(); ++c) {
      for (std::size_t r = 0; r < clamped.rows(); ++r) column[r] = clamped(r, c);
      const std::vector<double> norm = l2_normalize(column);
      for (std::size_t r = 0; r < clamped.rows(); ++r) out(r, c) = norm[r];
    }
  }
  return out;
}

AttendedResult attend(const Matrix& sim_normalized, const Matrix& targets,
                      double lambda1, Direction direction) {
  if (sim_normalized.empty() || targets.empty()) {
    throw DomainError("attend: empty input");
  }
  if (!(lambda1 > 0.0)) throw DomainError("attend: lambda1 must be positive");

  AttendedResult result;
  if (direction == Direction::ImageText) {
    // Each region (row) attends over the words; targets are the word rows.
    if (targets.rows() != sim_normalized.cols()) {
      throw DimensionError("attend: " + std::to_string(targets.rows()) +
                           " targets for " + std::to_string(sim_normalized.cols()) +
                           " words");
    }
    result.weights = Matrix(sim_normalized.rows(), sim_normalized.cols());
    for (std::size_t r = 0; r < sim_normalized.rows(); ++r) {
      const std::vector<double> w = softmax_scaled(sim_normalized.row(r), lambda1);
      for (std::size_t c = 0; c < sim_normalized.cols(); ++c) result.weights(r, c) = w[c];
    }
    result.attended = matmul(result.weights, targets);
  } else {
    // Each word (column) attends over the regions; targets are the region rows.
    if (targets.rows() != sim_normalized.rows()) {
      throw DimensionError("attend: " + std::to_string(targets.rows()) +
                           " targets for " + std::to_string(sim_normalized.rows()) +
                           " regions");
    }
    Matrix per_word(sim_normalized.cols(), sim_normalized.rows());
    std::vector<double> column(sim_normalized.rows());
    for (std::size_t c = 0; c < sim_normalized.cols(); ++c) {
      for (std::size_t r = 0; r < sim_normalized.rows(); ++r) {
        column[r] = sim_normalized(r, c);
      }
      const std::vector<double> w = softmax_scaled(column, lambda1);
      for (std::size_t r = 0; r < sim_normalized.rows(); ++r) per_word(c, r) = w[r];
    }
    result.attended = matmul(per_word, targets);
    result.weights = transpose(per_word);
  }
  return result;
}

std::vector<double> relevance(const Matrix& anchors, const Matrix& attended) {
  if (!anchors.same_shape(attended)) {
    throw DimensionError("relevance: anchors " + std::to_string(anchors.rows()) + "x" +
                         std::to_string(anchors.cols()) + " vs attended " +
                         std::to_string(attended.rows()) + "x" +
                         std::to_string(attended.cols()));
  }
  std::vector<double> out(anchors.rows());
  for (std::size_t r = 0; r < anchors.rows(); ++r) {
    out[r] = cosine(anchors.row(r), attended.row(r));
  }
  return out;
}

double pool(std::span<const double> relevance, Pooling pooling, double lambda2) {
  if (relevance.empty()) throw DomainError("pool: empty relevance");
  switch (pooling) {
    case Pooling::AVG: {
      double s = 0.0;
      for (double v : relevance) s += v;
      return s / static_cast<double>(relevance.size());
    }
    case Pooling::SUM: {
      double s = 0.0;
      for (double v : relevance) s += v;
      return s;
    }
    case Pooling::MAX: {
      double m = relevance[0];
      for (double v : relevance) m = std::max(m, v);
      return m;
    }
    case Pooling::LSE: {
      if (!(lambda2 > 0.0)) throw DomainError("pool: lambda2 must be positive");
      double m = relevance[0];
      for (double v : relevance) m = std::max(m, v);
      double total = 0.0;
      for (double v : relevance) total += std::exp(lambda2 * (v - m));
      return m + std::log(total) / lambda2;
    }
  }
  throw DomainError("pool: unknown pooling");
}

AttentionTrace score_pair(const Matrix& regions, const Matrix& words,
                          const AttentionConfig& config) {
  config.validate();
  const Matrix v = truncate_regions(regions, config.max_regions);
  require_pair(v, words, "score_pair");

  AttentionTrace trace;
  trace.sim = similarity_matrix(v, words);
  if (config.direction == Direction::ImageText) {
    trace.sim_normalized = threshold_normalize(trace.sim, NormalizeAxis::OverRegions);
    AttendedResult att = attend(trace.sim_normalized, words, config.lambda1,
                                Direction::ImageText);
    trace.weights = std::move(att.weights);
    trace.attended = std::move(att.attended);
    trace.relevance = relevance(v, trace.attended);
  } else {
    trace.sim_normalized = threshold_normalize(trace.sim, NormalizeAxis::OverWords);
    AttendedResult att = attend(trace.sim_normalized, v, config.lambda1,
                                Direction::TextImage);
    trace.weights = std::move(att.weights);
    trace.attended = std::move(att.attended);
    trace.relevance = relevance(words, trace.attended);
  }
  trace.score = pool(trace.relevance, config.pooling, config.lambda2);
  return trace;
}

double sum_max_score(const Matrix& regions, const Matrix& words, Direction direction,
                     bool use_cosine) {
  require_pair(regions, words, "sum_max_score");
  Matrix s(regions.rows(), words.rows());
  for (std::size_t i = 0; i < regions.rows(); ++i) {
    for (std::size_t j = 0; j < words.rows(); ++j) {
      s(i, j) = use_cosine ? cosine(regions.row(i), words.row(j))
                           : dot(regions.row(i), words.row(j));
    }
  }
  double total = 0.0;
  if (direction == Direction::ImageText) {
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double m = s(i, 0);
      for (std::size_t j = 1; j < s.cols(); ++j) m = std::max(m, s(i, j));
      total += m;
    }
  } else {
    for (std::size_t j = 0; j < s.cols(); ++j) {
      double m = s(0, j);
      for (std::size_t i = 1; i < s.rows(); ++i) m = std::max(m, s(i, j));
      total += m;
    }
  }
  return total;
}

double pair_score(const Matrix& regions, const Matrix& words,
                  const AttentionConfig& config) {
  config.validate();
  if (config.scorer == Scorer::SumMax) {
    const Matrix v = truncate_regions(regions, config.max_regions);
    return sum_max_score(v, words, config.direction, config.sum_max_cosine);
  }
  return score_pair(regions, words, config).score;
}

double ensemble_score(std::span<const double> scores) {
  if (scores.empty()) throw DomainError("ensemble_score: no scores");
  double s = 0.0;
  for (double v : scores) s += v;
  return s / static_cast<double>(scores.size());
}

namespace {

Var pool_node(Tape& tape, Var relevance, Pooling pooling, double lambda2) {
  switch (pooling) {
    case Pooling::AVG: {
      const double count = static_cast<double>(tape.value(relevance).rows());
      return tape.scale(tape.sum_all(relevance), 1.0 / count);
    }
    case Pooling::SUM:
      return tape.sum_all(relevance);
    case Pooling::MAX:
      return tape.max_all(relevance);
    case Pooling::LSE: {
      const Var peak = tape.max_all(relevance);
      const Var shifted = tape.scale(tape.sub_broadcast(relevance, peak), lambda2);
      const Var mass = tape.sum_all(tape.exp(shifted));
      return tape.add(tape.scale(tape.log(mass), 1.0 / lambda2), peak);
    }
  }
  throw DomainError("pool_node: unknown pooling");
}

Var truncate_regions_node(Tape& tape, Var regions,
                          const std::optional<int>& max_regions) {
  if (!max_regions) return regions;
  const auto cap = static_cast<std::size_t>(*max_regions);
  const std::size_t rows = tape.value(regions).rows();
  if (cap >= rows) return regions;
  std::vector<int> keep(cap);
  for (std::size_t i = 0; i < cap; ++i) keep[i] = static_cast<int>(i);
  return tape.gather_rows(regions, std::move(keep));
}

}  // namespace

Var score_pair_nodes(Tape& tape, Var regions, Var words, const AttentionConfig& config) {
  config.validate();
  const Var v = truncate_regions_node(tape, regions, config.max_regions);
  require_pair(tape.value(v), tape.value(words), "score_pair_nodes");

  const Var vn = tape.row_l2_normalize(v);
  const Var en = tape.row_l2_normalize(words);
  const Var sim = tape.matmul(vn, tape.transpose(en));
  const Var clamped = tape.relu(sim);

  Var rel{};
  if (config.direction == Direction::ImageText) {
    const Var normalized =
        tape.transpose(tape.row_l2_normalize(tape.transpose(clamped)));
    const Var weights = tape.row_softmax(normalized, config.lambda1);
    const Var attended = tape.matmul(weights, words);
    rel = tape.row_sums(tape.mul(vn, tape.row_l2_normalize(attended)));
  } else {
    const Var normalized = tape.row_l2_normalize(clamped);
    const Var weights = tape.row_softmax(tape.transpose(normalized), config.lambda1);
    const Var attended = tape.matmul(weights, v);
    rel = tape.row_sums(tape.mul(en, tape.row_l2_normalize(attended)));
  }
  return pool_node(tape, rel, config.pooling, config.lambda2);
}

Var sum_max_score_node(Tape& tape, Var regions, Var words, Direction direction,
                       bool use_cosine) {
  require_pair(tape.value(regions), tape.value(words), "sum_max_score_node");
  Var left = regions;
  Var right = words;
  if (use_cosine) {
    left = tape.row_l2_normalize(left);
    right = tape.row_l2_normalize(right);
  }
  const Var sim = tape.matmul(left, tape.transpose(right));
  if (direction == Direction::ImageText) {
    return tape.sum_all(tape.row_max(sim));
  }
  return tape.sum_all(tape.row_max(tape.transpose(sim)));
}

Var pair_score_node(Tape& tape, Var regions, Var words, const AttentionConfig& config) {
  config.validate();
  if (config.scorer == Scorer::SumMax) {
    const Var v = truncate_regions_node(tape, regions, config.max_regions);
    return sum_max_score_node(tape, v, words, config.direction, config.sum_max_cosine);
  }
  return score_pair_nodes(tape, regions, words, config);
}

}  // namespace xmatch
