#pragma once

#include <optional>
#include <span>
#include <vector>

#include "xmatch/matrix.hpp"
#include "xmatch/tape.hpp"

namespace xmatch {

// Which side of the pair anchors the attention.
//   TextImage: each word attends over image regions.
//   ImageText: each image region attends over words.
enum class Direction { TextImage, ImageText };

// How per-anchor relevance scores collapse into one pair score.
enum class Pooling { LSE, AVG, SUM, MAX };

// Pair scoring rule: full cross attention or the max-correlation baseline.
enum class Scorer { StackedAttention, SumMax };

// Axis along which the thresholded similarity matrix is normalized.
enum class NormalizeAxis { OverRegions, OverWords };

struct AttentionConfig {
  Direction direction = Direction::ImageText;
  Pooling pooling = Pooling::AVG;
  double lambda1 = 4.0;  // attention temperature
  double lambda2 = 5.0;  // LSE pooling temperature
  std::optional<int> max_regions;
  Scorer scorer = Scorer::StackedAttention;
  bool sum_max_cosine = false;  // SumMax on cosine instead of raw dot products

  void validate() const;
};

// Every intermediate of one scored pair, for inspection and tests.
struct AttentionTrace {
  Matrix sim;             // k x n cosine similarities
  Matrix sim_normalized;  // thresholded + normalized, k x n
  Matrix weights;         // k x n attention weights
  Matrix attended;        // one attended vector per anchor
  std::vector<double> relevance;  // one score per anchor
  double score = 0.0;
};

struct AttendedResult {
  Matrix weights;   // k x n; rows sum to 1 (ImageText), columns sum to 1 (TextImage)
  Matrix attended;  // k x h (ImageText) or n x h (TextImage)
};

// Cosine similarity of every region row against every word row: k x n.
Matrix similarity_matrix(const Matrix& regions, const Matrix& words);

// Clamp negatives to zero, then L2-normalize each slice along `axis`
// (OverRegions: each column; OverWords: each row). All-nonpositive slices
// come out as zeros.
Matrix threshold_normalize(const Matrix& sim, NormalizeAxis axis);

// Softmax attention at temperature lambda1 over the axis opposite the
// normalization, against the raw (unnormalized) target rows.
AttendedResult attend(const Matrix& sim_normalized, const Matrix& targets,
                      double lambda1, Direction direction);

// Cosine between each anchor row and its attended vector.
std::vector<double> relevance(const Matrix& anchors, const Matrix& attended);

double pool(std::span<const double> relevance, Pooling pooling, double lambda2);

// Full stacked-attention score of one (regions, words) pair.
AttentionTrace score_pair(const Matrix& regions, const Matrix& words,
                          const AttentionConfig& config);

// Baseline: sum over one side of the per-element maxima of the similarity
// grid. Raw dot products by default, cosine when `use_cosine`.
double sum_max_score(const Matrix& regions, const Matrix& words, Direction direction,
                     bool use_cosine = false);

// Score under config.scorer (stacked attention or sum-max).
double pair_score(const Matrix& regions, const Matrix& words,
                  const AttentionConfig& config);

// Mean of the scores of several trace-free scorers of the same pair.
double ensemble_score(std::span<const double> scores);

// Tape builders mirroring the plain functions; both sides differentiable.
Var score_pair_nodes(Tape& tape, Var regions, Var words, const AttentionConfig& config);
Var sum_max_score_node(Tape& tape, Var regions, Var words, Direction direction,
                       bool use_cosine = false);
Var pair_score_node(Tape& tape, Var regions, Var words, const AttentionConfig& config);

}  // namespace xmatch
