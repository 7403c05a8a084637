#include "xmatch/evalcore.hpp"

#include <algorithm>
#include <functional>
#include <thread>

namespace xmatch {

void ScoreGrid::validate() const {
  if (scores.rows() == 0 || scores.cols() == 0) {
    throw DomainError("score grid: empty");
  }
  if (sentence_image.size() != scores.cols()) {
    throw DimensionError("score grid: " + std::to_string(scores.cols()) +
                         " sentences but " + std::to_string(sentence_image.size()) +
                         " ground-truth entries");
  }
  for (std::size_t s = 0; s < sentence_image.size(); ++s) {
    const int img = sentence_image[s];
    if (img < 0 || img >= static_cast<int>(scores.rows())) {
      throw DomainError("score grid: sentence " + std::to_string(s) +
                        " references image " + std::to_string(img) + " outside " +
                        std::to_string(scores.rows()) + " images");
    }
  }
  if (!scores.all_finite()) throw NumericError("score grid: non-finite score");
}

ScoreGrid score_grid(const std::vector<Matrix>& image_features,
                     const std::vector<std::vector<int>>& sentences,
                     const std::vector<int>& sentence_image,
                     const ModelParams& params, const AttentionConfig& config,
                     int threads) {
  if (image_features.empty() || sentences.empty()) {
    throw DomainError("score_grid: empty inputs");
  }
  if (sentences.size() != sentence_image.size()) {
    throw DimensionError("score_grid: " + std::to_string(sentences.size()) +
                         " sentences but " + std::to_string(sentence_image.size()) +
                         " ground-truth entries");
  }
  config.validate();
  params.validate();
  if (threads < 1) throw ConfigError("score_grid: threads must be at least 1");

  std::vector<Matrix> regions(image_features.size());
  for (std::size_t i = 0; i < image_features.size(); ++i) {
    regions[i] = project_regions(image_features[i], params);
  }
  std::vector<Matrix> words(sentences.size());
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    words[s] = encode_sentence(sentences[s], params);
  }

  ScoreGrid grid;
  grid.scores = Matrix(regions.size(), words.size());
  grid.sentence_image = sentence_image;

  auto score_rows = [&](std::size_t row_begin, std::size_t row_end) {
    for (std::size_t i = row_begin; i < row_end; ++i) {
      for (std::size_t s = 0; s < words.size(); ++s) {
        grid.scores(i, s) = pair_score(regions[i], words[s], config);
      }
    }
  };

  const std::size_t rows = regions.size();
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), rows);
  if (workers <= 1) {
    score_rows(0, rows);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (rows + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(rows, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(score_rows, begin, end);
    }
    for (std::thread& t : pool) t.join();
  }
  grid.validate();
  return grid;
}

namespace {

// 1-based rank of candidate `target` for query column/row extractor `score`,
// higher scores first, ties to the lower index.
std::size_t rank_of(std::size_t target, std::size_t candidates,
                    const std::function<double(std::size_t)>& score) {
  const double target_score = score(target);
  std::size_t rank = 1;
  for (std::size_t c = 0; c < candidates; ++c) {
    if (c == target) continue;
    const double s = score(c);
    if (s > target_score || (s == target_score && c < target)) ++rank;
  }
  return rank;
}

std::vector<std::vector<int>> captions_by_image(const ScoreGrid& grid) {
  std::vector<std::vector<int>> of_image(grid.scores.rows());
  for (std::size_t s = 0; s < grid.sentence_image.size(); ++s) {
    of_image[static_cast<std::size_t>(grid.sentence_image[s])].push_back(
        static_cast<int>(s));
  }
  return of_image;
}

}  // namespace

double recall_at_k(const ScoreGrid& grid, int k, RetrievalDirection direction) {
  grid.validate();
  if (k < 1) throw DomainError("recall_at_k: K must be at least 1");

  std::size_t hits = 0;
  std::size_t queries = 0;
  if (direction == RetrievalDirection::ImageRetrieval) {
    // Each sentence queries the images.
    const auto cap = std::min<std::size_t>(static_cast<std::size_t>(k),
                                           grid.scores.rows());
    for (std::size_t s = 0; s < grid.scores.cols(); ++s) {
      const auto gt = static_cast<std::size_t>(grid.sentence_image[s]);
      const std::size_t rank = rank_of(
          gt, grid.scores.rows(), [&](std::size_t i) { return grid.scores(i, s); });
      ++queries;
      if (rank <= cap) ++hits;
    }
  } else {
    // Each image queries the sentences; best ground-truth caption counts.
    const auto cap = std::min<std::size_t>(static_cast<std::size_t>(k),
                                           grid.scores.cols());
    const std::vector<std::vector<int>> of_image = captions_by_image(grid);
    for (std::size_t i = 0; i < grid.scores.rows(); ++i) {
      if (of_image[i].empty()) continue;  // image never appears as ground truth
      std::size_t best = grid.scores.cols() + 1;
      for (int s : of_image[i]) {
        const std::size_t rank =
            rank_of(static_cast<std::size_t>(s), grid.scores.cols(),
                    [&](std::size_t c) { return grid.scores(i, c); });
        best = std::min(best, rank);
      }
      ++queries;
      if (best <= cap) ++hits;
    }
  }
  if (queries == 0) throw DomainError("recall_at_k: no queries");
  return 100.0 * static_cast<double>(hits) / static_cast<double>(queries);
}

RecallReport recall_report(const ScoreGrid& grid, RetrievalDirection direction) {
  RecallReport report;
  report.direction = direction;
  report.r1 = recall_at_k(grid, 1, direction);
  report.r5 = recall_at_k(grid, 5, direction);
  report.r10 = recall_at_k(grid, 10, direction);

  const std::size_t candidates = direction == RetrievalDirection::ImageRetrieval
                                     ? grid.scores.rows()
                                     : grid.scores.cols();
  if (direction == RetrievalDirection::ImageRetrieval) {
    report.queries = grid.scores.cols();
  } else {
    std::size_t with_captions = 0;
    for (const auto& caps : captions_by_image(grid)) {
      if (!caps.empty()) ++with_captions;
    }
    report.queries = with_captions;
  }
  if (candidates < 10) {
    report.note = "K clamped to " + std::to_string(candidates) + " candidates";
  }
  return report;
}

ScoreGrid ensemble_grids(std::span<const ScoreGrid> grids) {
  if (grids.empty()) throw DomainError("ensemble_grids: no grids");
  grids[0].validate();
  ScoreGrid out;
  out.scores = grids[0].scores;
  out.sentence_image = grids[0].sentence_image;
  for (std::size_t g = 1; g < grids.size(); ++g) {
    grids[g].validate();
    if (!grids[g].scores.same_shape(out.scores)) {
      throw DimensionError("ensemble_grids: grid " + std::to_string(g) +
                           " shape differs");
    }
    if (grids[g].sentence_image != out.sentence_image) {
      throw ConfigError("ensemble_grids: grid " + std::to_string(g) +
                        " has different ground truth");
    }
    out.scores = add(out.scores, grids[g].scores);
  }
  out.scores = scale(out.scores, 1.0 / static_cast<double>(grids.size()));
  return out;
}

FoldedRecall fold_averaged(const ScoreGrid& grid, std::size_t fold_size) {
  grid.validate();
  if (fold_size < 1) throw DomainError("fold_averaged: fold size must be positive");
  const std::size_t folds = grid.scores.rows() / fold_size;
  if (folds == 0) {
    throw DomainError("fold_averaged: fold size " + std::to_string(fold_size) +
                      " exceeds " + std::to_string(grid.scores.rows()) + " images");
  }

  FoldedRecall out;
  out.folds = folds;
  out.sentence.direction = RetrievalDirection::SentenceRetrieval;
  out.image.direction = RetrievalDirection::ImageRetrieval;

  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t begin = f * fold_size;
    const std::size_t end = begin + fold_size;

    std::vector<int> fold_sentences;
    for (std::size_t s = 0; s < grid.sentence_image.size(); ++s) {
      const auto img = static_cast<std::size_t>(grid.sentence_image[s]);
      if (img >= begin && img < end) fold_sentences.push_back(static_cast<int>(s));
    }
    if (fold_sentences.empty()) {
      throw DomainError("fold_averaged: fold " + std::to_string(f) +
                        " has no sentences");
    }

    ScoreGrid sub;
    sub.scores = Matrix(fold_size, fold_sentences.size());
    sub.sentence_image.resize(fold_sentences.size());
    for (std::size_t i = 0; i < fold_size; ++i) {
      for (std::size_t s = 0; s < fold_sentences.size(); ++s) {
        sub.scores(i, s) =
            grid.scores(begin + i, static_cast<std::size_t>(fold_sentences[s]));
      }
    }
    for (std::size_t s = 0; s < fold_sentences.size(); ++s) {
      sub.sentence_image[s] =
          grid.sentence_image[static_cast<std::size_t>(fold_sentences[s])] -
          static_cast<int>(begin);
    }

    const RecallReport sent = recall_report(sub, RetrievalDirection::SentenceRetrieval);
    const RecallReport img = recall_report(sub, RetrievalDirection::ImageRetrieval);
    out.sentence.r1 += sent.r1;
    out.sentence.r5 += sent.r5;
    out.sentence.r10 += sent.r10;
    out.sentence.queries += sent.queries;
    out.image.r1 += img.r1;
    out.image.r5 += img.r5;
    out.image.r10 += img.r10;
    out.image.queries += img.queries;
    if (out.sentence.note.empty()) out.sentence.note = sent.note;
    if (out.image.note.empty()) out.image.note = img.note;
  }

  const double n = static_cast<double>(folds);
  out.sentence.r1 /= n;
  out.sentence.r5 /= n;
  out.sentence.r10 /= n;
  out.image.r1 /= n;
  out.image.r5 /= n;
  out.image.r10 /= n;
  const std::string suffix = "averaged over " + std::to_string(folds) + " folds of " +
                             std::to_string(fold_size) + " images";
  out.sentence.note = out.sentence.note.empty() ? suffix : out.sentence.note + "; " + suffix;
  out.image.note = out.image.note.empty() ? suffix : out.image.note + "; " + suffix;
  return out;
}

}  // namespace xmatch
