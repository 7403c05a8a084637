#pragma once

#include <span>
#include <string>
#include <vector>

#include "xmatch/attention.hpp"
#include "xmatch/encoders.hpp"
#include "xmatch/matrix.hpp"

namespace xmatch {

// Exhaustive cross-modal score grid with sentence-to-image ground truth.
struct ScoreGrid {
  Matrix scores;                   // images x sentences
  std::vector<int> sentence_image;  // ground-truth image per sentence

  void validate() const;
};

// Scores every (image, sentence) pair. image_features are raw region rows;
// sentences are token sequences. threads > 1 splits the grid rows across
// workers; results are bit-identical for any thread count.
ScoreGrid score_grid(const std::vector<Matrix>& image_features,
                     const std::vector<std::vector<int>>& sentences,
                     const std::vector<int>& sentence_image,
                     const ModelParams& params, const AttentionConfig& config,
                     int threads = 1);

enum class RetrievalDirection { SentenceRetrieval, ImageRetrieval };

// Percentage of queries whose ground truth lands in the top K (ties broken
// by lower candidate index). SentenceRetrieval queries each image for its
// best-ranked caption; ImageRetrieval queries each sentence for its image.
// K beyond the candidate count is clamped.
double recall_at_k(const ScoreGrid& grid, int k, RetrievalDirection direction);

struct RecallReport {
  RetrievalDirection direction = RetrievalDirection::SentenceRetrieval;
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  std::size_t queries = 0;
  std::string note;  // e.g. K clamped to the candidate count
};

RecallReport recall_report(const ScoreGrid& grid, RetrievalDirection direction);

// Elementwise mean of score grids sharing shape and ground truth.
ScoreGrid ensemble_grids(std::span<const ScoreGrid> grids);

struct FoldedRecall {
  RecallReport sentence;  // recalls averaged over folds
  RecallReport image;
  std::size_t folds = 0;
};

// Splits the images into consecutive folds of fold_size (partial tail fold
// dropped), evaluates each fold as its own grid, and averages the recalls.
FoldedRecall fold_averaged(const ScoreGrid& grid, std::size_t fold_size);

}  // namespace xmatch
