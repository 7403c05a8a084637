#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmatch/matrix.hpp"

namespace xmatch {

// Token dictionary. Index 0 is always the unknown-token sentinel.
class Vocab {
 public:
  static constexpr int kUnknown = 0;
  static constexpr const char* kUnknownToken = "<unk>";

  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);  // tokens[0] must be the sentinel

  int lookup(const std::string& token) const;  // kUnknown when absent
  const std::string& token(int index) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

Vocab load_vocab(const std::string& path);
void save_vocab(const std::string& path, const Vocab& vocab);

// One tokenized caption bound to its image.
struct Caption {
  int image_id = -1;
  std::vector<int> tokens;
};

// Region features are stored 32-bit on disk and widened to 64-bit here.
// Per-image region count is capped at 128 by the format.
inline constexpr std::size_t kMaxRegionsPerImage = 128;

void write_features(const std::string& path, const std::vector<Matrix>& images);
std::vector<Matrix> read_features(const std::string& path);

// Caption file: one line per caption, "image_id<TAB>token token ...".
// Unknown tokens map to the sentinel index.
std::vector<Caption> load_captions(const std::string& path, const Vocab& vocab);
void save_captions(const std::string& path, const std::vector<Caption>& captions,
                   const Vocab& vocab);

struct Dataset {
  std::vector<Matrix> features;       // raw region features per image
  std::vector<Caption> captions;
  Vocab vocab;
  std::vector<std::vector<int>> captions_of;  // image id -> caption indices

  std::size_t image_count() const { return features.size(); }
};

// Builds captions_of and checks caption image ids against the feature count.
Dataset make_dataset(std::vector<Matrix> features, std::vector<Caption> captions,
                     Vocab vocab);

struct SyntheticSpec {
  int concepts = 30;
  int images = 150;
  int regions = 6;           // regions per image
  int captions_per_image = 5;
  double noise = 0.1;        // per-dimension Gaussian scale
  std::uint64_t seed = 7;
  int raw_dim = 64;
  double filler_fraction = 0.2;  // share of filler tokens per caption

  void validate() const;
};

struct SyntheticDataset {
  Dataset dataset;
  std::vector<std::vector<int>> region_concepts;  // image -> concept per region
  std::vector<std::string> concept_tokens;        // concept -> vocabulary token
};

// Aligned toy data: unit-vector concept prototypes, noisy prototype copies as
// regions, captions listing the image's concepts plus filler words.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

// Disjoint seed-deterministic image-level partition.
SplitIndices split_dataset(std::size_t image_count, const SplitCounts& counts,
                           std::uint64_t seed);

void save_splits(const std::string& path, const SplitIndices& splits);
SplitIndices load_splits(const std::string& path, std::size_t image_count);

// Directory layout: features.scnf, captions.tsv, vocab.txt, splits.json.
void save_dataset(const std::string& dir, const Dataset& dataset,
                  const SplitIndices& splits);
Dataset load_dataset(const std::string& dir);

}  // namespace xmatch
