#include "xmatch/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "xmatch/rng.hpp"

namespace xmatch {

namespace {

constexpr char kFeatureMagic[4] = {'S', 'C', 'N', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string& path, const std::string& data) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(tmp + ": cannot open for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw FormatError(tmp + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  put_u32(out, bits);
}

struct Reader {
  const std::string& data;
  const std::string& path;
  std::size_t pos = 0;

  void require(std::size_t count, const std::string& what) const {
    if (pos + count > data.size()) {
      throw FormatError(path + ": truncated " + what + ", expected " +
                            std::to_string(count) + " bytes but only " +
                            std::to_string(data.size() - pos) + " remain",
                        pos);
    }
  }

  std::uint32_t u32(const std::string& what) {
    require(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i]))
           << (8 * i);
    }
    pos += 4;
    return v;
  }

  float f32(const std::string& what) { return std::bit_cast<float>(u32(what)); }
};

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty() || tokens_[0] != kUnknownToken) {
    throw FormatError(std::string("vocabulary must start with the sentinel ") +
                      kUnknownToken);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) {
      throw FormatError("vocabulary entry " + std::to_string(i) + " is empty");
    }
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw FormatError("duplicate vocabulary token '" + tokens_[i] + "' at line " +
                        std::to_string(i + 1));
    }
  }
}

int Vocab::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnknown : it->second;
}

const std::string& Vocab::token(int index) const {
  if (index < 0 || index >= static_cast<int>(tokens_.size())) {
    throw VocabError("vocab: index " + std::to_string(index) + " outside " +
                     std::to_string(tokens_.size()) + " tokens");
  }
  return tokens_[static_cast<std::size_t>(index)];
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open for reading");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  try {
    return Vocab(std::move(tokens));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void save_vocab(const std::string& path, const Vocab& vocab) {
  std::string out;
  for (const std::string& t : vocab.tokens()) {
    out += t;
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_features(const std::string& path, const std::vector<Matrix>& images) {
  std::string out;
  out.append(kFeatureMagic, sizeof(kFeatureMagic));
  put_u32(out, kFeatureVersion);
  put_u32(out, static_cast<std::uint32_t>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Matrix& m = images[i];
    if (m.rows() == 0 || m.cols() == 0) {
      throw DomainError("write_features: image " + std::to_string(i) + " is empty");
    }
    if (m.rows() > kMaxRegionsPerImage) {
      throw DomainError("write_features: image " + std::to_string(i) + " has " +
                        std::to_string(m.rows()) + " regions, cap is " +
                        std::to_string(kMaxRegionsPerImage));
    }
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) {
      const float f = static_cast<float>(v);
      if (!std::isfinite(f)) {
        throw DomainError("write_features: image " + std::to_string(i) +
                          " has a value outside 32-bit float range");
      }
      put_f32(out, f);
    }
  }
  write_file_atomic(path, out);
}

std::vector<Matrix> read_features(const std::string& path) {
  const std::string data = read_file(path);
  Reader r{data, path};

  r.require(4, "magic");
  if (data.compare(0, 4, kFeatureMagic, 4) != 0) {
    throw FormatError(path + ": bad magic, not a region-feature file", 0);
  }
  r.pos = 4;
  const std::size_t version_at = r.pos;
  const std::uint32_t version = r.u32("version");
  if (version != kFeatureVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version),
                      version_at);
  }
  const std::uint32_t count = r.u32("image count");

  std::vector<Matrix> images;
  images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string tag = "image " + std::to_string(i);
    const std::size_t header_at = r.pos;
    const std::uint32_t k = r.u32(tag + " region count");
    if (k == 0 || k > kMaxRegionsPerImage) {
      throw FormatError(path + ": " + tag + " region count " + std::to_string(k) +
                            " outside [1, " + std::to_string(kMaxRegionsPerImage) + "]",
                        header_at);
    }
    const std::size_t width_at = r.pos;
    const std::uint32_t d = r.u32(tag + " feature width");
    if (d == 0) {
      throw FormatError(path + ": " + tag + " has feature width 0", width_at);
    }
    const std::size_t payload = static_cast<std::size_t>(k) * d * 4;
    r.require(payload, tag + " payload");
    std::vector<double> values(static_cast<std::size_t>(k) * d);
    for (std::size_t j = 0; j < values.size(); ++j) {
      const std::size_t value_at = r.pos;
      const float f = r.f32(tag + " values");
      if (!std::isfinite(f)) {
        throw FormatError(path + ": " + tag + " has a non-finite value", value_at);
      }
      values[j] = static_cast<double>(f);
    }
    images.emplace_back(k, d, std::move(values));
  }
  if (r.pos != data.size()) {
    throw FormatError(path + ": " + std::to_string(data.size() - r.pos) +
                          " trailing bytes after the last image",
                      r.pos);
  }
  return images;
}

std::vector<Caption> load_captions(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open for reading");
  std::vector<Caption> captions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(path + ": line " + std::to_string(line_no) +
                        " has no tab separator");
    }
    Caption cap;
    try {
      std::size_t used = 0;
      cap.image_id = std::stoi(line.substr(0, tab), &used);
      if (used != tab || cap.image_id < 0) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw FormatError(path + ": line " + std::to_string(line_no) +
                        " has a malformed image id '" + line.substr(0, tab) + "'");
    }
    std::istringstream words(line.substr(tab + 1));
    std::string tok;
    while (words >> tok) cap.tokens.push_back(vocab.lookup(tok));
    if (cap.tokens.empty()) {
      throw FormatError(path + ": line " + std::to_string(line_no) +
                        " has no caption tokens");
    }
    captions.push_back(std::move(cap));
  }
  return captions;
}

void save_captions(const std::string& path, const std::vector<Caption>& captions,
                   const Vocab& vocab) {
  std::string out;
  for (const Caption& cap : captions) {
    out += std::to_string(cap.image_id);
    out += '\t';
    for (std::size_t i = 0; i < cap.tokens.size(); ++i) {
      if (i > 0) out += ' ';
      out += vocab.token(cap.tokens[i]);
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

Dataset make_dataset(std::vector<Matrix> features, std::vector<Caption> captions,
                     Vocab vocab) {
  Dataset d;
  d.features = std::move(features);
  d.captions = std::move(captions);
  d.vocab = std::move(vocab);
  d.captions_of.assign(d.features.size(), {});
  for (std::size_t c = 0; c < d.captions.size(); ++c) {
    const int id = d.captions[c].image_id;
    if (id < 0 || id >= static_cast<int>(d.features.size())) {
      throw FormatError("caption " + std::to_string(c) + " references image " +
                        std::to_string(id) + " but only " +
                        std::to_string(d.features.size()) + " images exist");
    }
    for (int t : d.captions[c].tokens) {
      if (t < 0 || t >= static_cast<int>(d.vocab.size())) {
        throw VocabError("caption " + std::to_string(c) + " has token index " +
                         std::to_string(t) + " outside the vocabulary");
      }
    }
    d.captions_of[static_cast<std::size_t>(id)].push_back(static_cast<int>(c));
  }
  return d;
}

void SyntheticSpec::validate() const {
  if (concepts < 2) throw ConfigError("synthetic: need at least 2 concepts");
  if (images < 1) throw ConfigError("synthetic: need at least 1 image");
  if (regions < 1) throw ConfigError("synthetic: need at least 1 region per image");
  if (regions > static_cast<int>(kMaxRegionsPerImage)) {
    throw ConfigError("synthetic: regions per image capped at " +
                      std::to_string(kMaxRegionsPerImage));
  }
  if (captions_per_image < 1) throw ConfigError("synthetic: need at least 1 caption");
  if (noise < 0.0) throw ConfigError("synthetic: noise must be nonnegative");
  if (raw_dim < 1) throw ConfigError("synthetic: raw_dim must be positive");
  if (filler_fraction < 0.0 || filler_fraction >= 1.0) {
    throw ConfigError("synthetic: filler_fraction must be in [0, 1)");
  }
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  static const std::vector<std::string> kFillers = {"a", "is", "the", "on", "of"};
  const double keep_prob = 0.8;

  SyntheticDataset out;
  out.concept_tokens.reserve(spec.concepts);
  for (int c = 0; c < spec.concepts; ++c) {
    out.concept_tokens.push_back("c" + std::to_string(c));
  }

  std::vector<std::string> vocab_tokens = {Vocab::kUnknownToken};
  vocab_tokens.insert(vocab_tokens.end(), kFillers.begin(), kFillers.end());
  vocab_tokens.insert(vocab_tokens.end(), out.concept_tokens.begin(),
                      out.concept_tokens.end());
  Vocab vocab(std::move(vocab_tokens));
  const int filler_base = 1;
  const int concept_base = filler_base + static_cast<int>(kFillers.size());

  // Unit-vector prototypes, one per concept.
  std::vector<std::vector<double>> prototypes(spec.concepts);
  for (int c = 0; c < spec.concepts; ++c) {
    std::vector<double> p(spec.raw_dim);
    for (double& v : p) v = rng.normal();
    prototypes[c] = l2_normalize(p);
  }

  std::vector<Matrix> features;
  std::vector<Caption> captions;
  out.region_concepts.resize(spec.images);

  std::vector<int> concept_pool(spec.concepts);
  for (int c = 0; c < spec.concepts; ++c) concept_pool[c] = c;

  for (int m = 0; m < spec.images; ++m) {
    // Concepts for this image: distinct while they last, repeats if k > C.
    std::vector<int>& chosen = out.region_concepts[m];
    chosen.resize(spec.regions);
    if (spec.regions <= spec.concepts) {
      rng.shuffle(concept_pool);
      for (int r = 0; r < spec.regions; ++r) chosen[r] = concept_pool[r];
    } else {
      for (int r = 0; r < spec.regions; ++r) {
        chosen[r] = static_cast<int>(rng.index(static_cast<std::size_t>(spec.concepts)));
      }
    }

    Matrix f(spec.regions, spec.raw_dim);
    for (int r = 0; r < spec.regions; ++r) {
      const std::vector<double>& proto = prototypes[chosen[r]];
      for (int d = 0; d < spec.raw_dim; ++d) {
        f(r, d) = proto[d] + spec.noise * rng.normal();
      }
    }
    features.push_back(std::move(f));

    for (int c = 0; c < spec.captions_per_image; ++c) {
      std::vector<int> tokens;
      for (int r = 0; r < spec.regions; ++r) {
        if (rng.uniform() < keep_prob) {
          tokens.push_back(concept_base + chosen[r]);
        }
      }
      if (tokens.empty()) tokens.push_back(concept_base + chosen[0]);

      // filler_fraction of the final caption: f = fraction/(1-fraction) per
      // kept concept token, at least one.
      const double ratio = spec.filler_fraction / (1.0 - spec.filler_fraction);
      const auto filler_count = std::max<std::size_t>(
          1, static_cast<std::size_t>(
                 std::llround(ratio * static_cast<double>(tokens.size()))));
      for (std::size_t i = 0; i < filler_count; ++i) {
        tokens.push_back(filler_base + static_cast<int>(rng.index(kFillers.size())));
      }
      rng.shuffle(tokens);
      captions.push_back(Caption{m, std::move(tokens)});
    }
  }

  out.dataset = make_dataset(std::move(features), std::move(captions), std::move(vocab));
  return out;
}

SplitIndices split_dataset(std::size_t image_count, const SplitCounts& counts,
                           std::uint64_t seed) {
  if (counts.train < 0 || counts.val < 0 || counts.test < 0) {
    throw ConfigError("split: negative counts");
  }
  const std::size_t total = static_cast<std::size_t>(counts.train) +
                            static_cast<std::size_t>(counts.val) +
                            static_cast<std::size_t>(counts.test);
  if (total > image_count) {
    throw ConfigError("split: counts sum to " + std::to_string(total) + " but only " +
                      std::to_string(image_count) + " images exist");
  }
  std::vector<int> order(image_count);
  for (std::size_t i = 0; i < image_count; ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(order);

  SplitIndices splits;
  auto cursor = order.begin();
  splits.train.assign(cursor, cursor + counts.train);
  cursor += counts.train;
  splits.val.assign(cursor, cursor + counts.val);
  cursor += counts.val;
  splits.test.assign(cursor, cursor + counts.test);
  return splits;
}

namespace {

nlohmann::ordered_json splits_to_json(const SplitIndices& splits) {
  nlohmann::ordered_json j;
  j["train"] = splits.train;
  j["val"] = splits.val;
  j["test"] = splits.test;
  return j;
}

}  // namespace

void save_splits(const std::string& path, const SplitIndices& splits) {
  write_file_atomic(path, splits_to_json(splits).dump(2) + "\n");
}

SplitIndices load_splits(const std::string& path, std::size_t image_count) {
  const std::string data = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(data);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": invalid JSON: " + e.what());
  }
  SplitIndices splits;
  auto read_part = [&](const char* key, std::vector<int>& into) {
    if (!j.contains(key) || !j[key].is_array()) {
      throw FormatError(path + ": missing split array '" + key + "'");
    }
    for (const auto& v : j[key]) {
      if (!v.is_number_integer()) {
        throw FormatError(path + ": split '" + key + "' has a non-integer entry");
      }
      const int id = v.get<int>();
      if (id < 0 || id >= static_cast<int>(image_count)) {
        throw FormatError(path + ": split '" + key + "' references image " +
                          std::to_string(id) + " but only " +
                          std::to_string(image_count) + " images exist");
      }
      into.push_back(id);
    }
  };
  read_part("train", splits.train);
  read_part("val", splits.val);
  read_part("test", splits.test);

  std::vector<bool> used(image_count, false);
  for (const auto* part : {&splits.train, &splits.val, &splits.test}) {
    for (int id : *part) {
      if (used[static_cast<std::size_t>(id)]) {
        throw FormatError(path + ": image " + std::to_string(id) +
                          " appears in more than one split");
      }
      used[static_cast<std::size_t>(id)] = true;
    }
  }
  return splits;
}

void save_dataset(const std::string& dir, const Dataset& dataset,
                  const SplitIndices& splits) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  write_features((base / "features.scnf").string(), dataset.features);
  save_captions((base / "captions.tsv").string(), dataset.captions, dataset.vocab);
  save_vocab((base / "vocab.txt").string(), dataset.vocab);
  save_splits((base / "splits.json").string(), splits);
}

Dataset load_dataset(const std::string& dir) {
  const std::filesystem::path base(dir);
  std::vector<Matrix> features = read_features((base / "features.scnf").string());
  Vocab vocab = load_vocab((base / "vocab.txt").string());
  std::vector<Caption> captions =
      load_captions((base / "captions.tsv").string(), vocab);
  return make_dataset(std::move(features), std::move(captions), std::move(vocab));
}

}  // namespace xmatch
