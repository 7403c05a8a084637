// Command-line surface for the xmatch library: synthetic data generation,
// training, retrieval evaluation, pair scoring, and attention-trace export.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "xmatch/checkpoint.hpp"
#include "xmatch/dataio.hpp"
#include "xmatch/evalcore.hpp"
#include "xmatch/learning.hpp"
#include "xmatch/presets.hpp"

namespace {

using nlohmann::ordered_json;
using namespace xmatch;

// ---------------------------------------------------------------------------
// Enum <-> string plumbing

Direction parse_direction(const std::string& s) {
  if (s == "i2t") return Direction::ImageText;
  if (s == "t2i") return Direction::TextImage;
  throw ConfigError("unknown direction '" + s + "' (expected i2t or t2i)");
}

std::string direction_name(Direction d) {
  return d == Direction::ImageText ? "i2t" : "t2i";
}

Pooling parse_pooling(const std::string& s) {
  if (s == "lse") return Pooling::LSE;
  if (s == "avg") return Pooling::AVG;
  if (s == "sum") return Pooling::SUM;
  if (s == "max") return Pooling::MAX;
  throw ConfigError("unknown pooling '" + s + "' (expected lse, avg, sum, or max)");
}

std::string pooling_name(Pooling p) {
  switch (p) {
    case Pooling::LSE: return "lse";
    case Pooling::AVG: return "avg";
    case Pooling::SUM: return "sum";
    case Pooling::MAX: return "max";
  }
  return "avg";
}

Scorer parse_scorer(const std::string& s) {
  if (s == "attention") return Scorer::StackedAttention;
  if (s == "summax") return Scorer::SumMax;
  throw ConfigError("unknown scorer '" + s + "' (expected attention or summax)");
}

std::string scorer_name(Scorer s) {
  return s == Scorer::StackedAttention ? "attention" : "summax";
}

LossMode parse_loss_mode(const std::string& s) {
  if (s == "hard") return LossMode::HardestNegatives;
  if (s == "all") return LossMode::AllNegatives;
  throw ConfigError("unknown loss mode '" + s + "' (expected hard or all)");
}

// ---------------------------------------------------------------------------
// Run settings: preset < config file < explicit flags.

struct Settings {
  AttentionConfig attention;
  LossConfig loss;
  OptimizerConfig optimizer;
  int epochs = 20;
  int batch_size = 16;
  ModelDims dims;
  std::uint64_t seed = 7;
  int threads = 1;

  void apply_preset(const Preset& p) {
    attention = p.attention;
    loss = p.loss;
    optimizer = p.optimizer;
    epochs = p.epochs;
    batch_size = p.batch_size;
    dims = p.dims;
  }
};

// Optional override slots filled by the config file and/or flags.
struct Overrides {
  std::optional<std::string> direction, pooling, scorer, loss_mode;
  std::optional<double> lambda1, lambda2, margin, learning_rate, decay_factor,
      clip_norm;
  std::optional<int> max_regions, decay_epoch, epochs, batch_size, hidden, embed,
      threads;
  std::optional<bool> sum_max_cosine;
  std::optional<std::uint64_t> seed;

  void apply(Settings& s) const {
    if (direction) s.attention.direction = parse_direction(*direction);
    if (pooling) s.attention.pooling = parse_pooling(*pooling);
    if (scorer) s.attention.scorer = parse_scorer(*scorer);
    if (lambda1) s.attention.lambda1 = *lambda1;
    if (lambda2) s.attention.lambda2 = *lambda2;
    if (sum_max_cosine) s.attention.sum_max_cosine = *sum_max_cosine;
    if (max_regions) {
      if (*max_regions == 0) {
        s.attention.max_regions.reset();
      } else {
        s.attention.max_regions = *max_regions;
      }
    }
    if (loss_mode) s.loss.mode = parse_loss_mode(*loss_mode);
    if (margin) s.loss.margin = *margin;
    if (learning_rate) s.optimizer.learning_rate = *learning_rate;
    if (decay_epoch) s.optimizer.decay_epoch = *decay_epoch;
    if (decay_factor) s.optimizer.decay_factor = *decay_factor;
    if (clip_norm) s.optimizer.clip_norm = *clip_norm;
    if (epochs) s.epochs = *epochs;
    if (batch_size) s.batch_size = *batch_size;
    if (hidden) s.dims.hidden = static_cast<std::size_t>(*hidden);
    if (embed) s.dims.embed = static_cast<std::size_t>(*embed);
    if (seed) s.seed = *seed;
    if (threads) s.threads = *threads;
  }
};

Overrides read_config_file(const std::string& path, std::string& preset_out) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");

  Overrides o;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "preset") preset_out = value.get<std::string>();
      else if (key == "direction") o.direction = value.get<std::string>();
      else if (key == "pooling") o.pooling = value.get<std::string>();
      else if (key == "scorer") o.scorer = value.get<std::string>();
      else if (key == "loss") o.loss_mode = value.get<std::string>();
      else if (key == "lambda1") o.lambda1 = value.get<double>();
      else if (key == "lambda2") o.lambda2 = value.get<double>();
      else if (key == "margin") o.margin = value.get<double>();
      else if (key == "learning_rate") o.learning_rate = value.get<double>();
      else if (key == "decay_factor") o.decay_factor = value.get<double>();
      else if (key == "clip_norm") o.clip_norm = value.get<double>();
      else if (key == "sum_max_cosine") o.sum_max_cosine = value.get<bool>();
      else if (key == "max_regions") o.max_regions = value.is_null() ? 0 : value.get<int>();
      else if (key == "decay_epoch") o.decay_epoch = value.get<int>();
      else if (key == "epochs") o.epochs = value.get<int>();
      else if (key == "batch_size") o.batch_size = value.get<int>();
      else if (key == "hidden") o.hidden = value.get<int>();
      else if (key == "embed") o.embed = value.get<int>();
      else if (key == "threads") o.threads = value.get<int>();
      else if (key == "seed") o.seed = value.get<std::uint64_t>();
      else throw ConfigError(path + ": unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": bad value for '" + key + "': " + e.what());
    }
  }
  return o;
}

// Flag values wired into CLI11; only flags the user passed become overrides.
struct FlagSlots {
  std::string direction, pooling, scorer, loss_mode;
  double lambda1 = 0, lambda2 = 0, margin = 0, learning_rate = 0, decay_factor = 0,
         clip_norm = 0;
  int max_regions = 0, decay_epoch = 0, epochs = 0, batch_size = 0, hidden = 0,
      embed = 0, threads = 0;
  bool sum_max_cosine = false;
  std::uint64_t seed = 0;

  CLI::Option *direction_opt = nullptr, *pooling_opt = nullptr, *scorer_opt = nullptr,
              *loss_opt = nullptr, *lambda1_opt = nullptr, *lambda2_opt = nullptr,
              *margin_opt = nullptr, *lr_opt = nullptr, *decay_factor_opt = nullptr,
              *clip_opt = nullptr, *max_regions_opt = nullptr,
              *decay_epoch_opt = nullptr, *epochs_opt = nullptr, *batch_opt = nullptr,
              *hidden_opt = nullptr, *embed_opt = nullptr, *threads_opt = nullptr,
              *cosine_opt = nullptr, *seed_opt = nullptr;

  void attach_scoring(CLI::App* cmd) {
    direction_opt = cmd->add_option("--direction", direction,
                                    "Attention direction: i2t or t2i");
    pooling_opt = cmd->add_option("--pooling", pooling,
                                  "Relevance pooling: lse, avg, sum, or max");
    scorer_opt = cmd->add_option("--scorer", scorer,
                                 "Pair scorer: attention or summax");
    lambda1_opt = cmd->add_option("--lambda1", lambda1, "Attention softmax temperature");
    lambda2_opt = cmd->add_option("--lambda2", lambda2, "LSE pooling temperature");
    cosine_opt = cmd->add_flag("--sum-max-cosine", sum_max_cosine,
                               "Sum-max baseline on cosine instead of dot products");
    max_regions_opt = cmd->add_option(
        "--max-regions", max_regions,
        "Keep only the first N regions per image (0 disables the cap)");
  }

  void attach_training(CLI::App* cmd) {
    loss_opt = cmd->add_option("--loss", loss_mode, "Triplet loss mode: hard or all");
    margin_opt = cmd->add_option("--margin", margin, "Triplet loss margin");
    lr_opt = cmd->add_option("--lr", learning_rate, "Initial Adam learning rate");
    decay_epoch_opt =
        cmd->add_option("--decay-epoch", decay_epoch, "Epoch at which the rate drops");
    decay_factor_opt =
        cmd->add_option("--decay-factor", decay_factor, "Learning-rate decay factor");
    clip_opt = cmd->add_option("--clip-norm", clip_norm, "Global gradient-norm cap");
    epochs_opt = cmd->add_option("--epochs", epochs, "Training epochs");
    batch_opt = cmd->add_option("--batch-size", batch_size, "Images per batch");
    hidden_opt = cmd->add_option("--hidden", hidden, "Joint embedding width");
    embed_opt = cmd->add_option("--embed", embed, "Word embedding width");
  }

  void attach_common(CLI::App* cmd) {
    seed_opt = cmd->add_option("--seed", seed, "Random seed");
    threads_opt = cmd->add_option("--threads", threads,
                                  "Worker threads for score grids (default 1)");
  }

  Overrides to_overrides() const {
    Overrides o;
    auto given = [](const CLI::Option* opt) { return opt && opt->count() > 0; };
    if (given(direction_opt)) o.direction = direction;
    if (given(pooling_opt)) o.pooling = pooling;
    if (given(scorer_opt)) o.scorer = scorer;
    if (given(loss_opt)) o.loss_mode = loss_mode;
    if (given(lambda1_opt)) o.lambda1 = lambda1;
    if (given(lambda2_opt)) o.lambda2 = lambda2;
    if (given(margin_opt)) o.margin = margin;
    if (given(lr_opt)) o.learning_rate = learning_rate;
    if (given(decay_factor_opt)) o.decay_factor = decay_factor;
    if (given(clip_opt)) o.clip_norm = clip_norm;
    if (given(max_regions_opt)) o.max_regions = max_regions;
    if (given(decay_epoch_opt)) o.decay_epoch = decay_epoch;
    if (given(epochs_opt)) o.epochs = epochs;
    if (given(batch_opt)) o.batch_size = batch_size;
    if (given(hidden_opt)) o.hidden = hidden;
    if (given(embed_opt)) o.embed = embed;
    if (given(threads_opt)) o.threads = threads;
    if (given(cosine_opt)) o.sum_max_cosine = sum_max_cosine;
    if (given(seed_opt)) o.seed = seed;
    return o;
  }
};

Settings resolve_settings(const std::string& preset_flag, const std::string& config_path,
                          const FlagSlots& flags) {
  std::string preset_name = "toy-it-avg";
  Overrides from_file;
  if (!config_path.empty()) {
    std::string from_config;
    from_file = read_config_file(config_path, from_config);
    if (!from_config.empty()) preset_name = from_config;
  }
  if (!preset_flag.empty()) preset_name = preset_flag;

  Settings s;
  s.apply_preset(find_preset(preset_name));
  from_file.apply(s);
  flags.to_overrides().apply(s);
  s.attention.validate();
  s.loss.validate();
  s.optimizer.validate();
  if (s.threads < 1) throw ConfigError("threads must be at least 1");
  return s;
}

// ---------------------------------------------------------------------------
// Shared helpers

std::size_t uniform_feature_width(const std::vector<Matrix>& features) {
  const std::size_t width = features.at(0).cols();
  for (std::size_t i = 1; i < features.size(); ++i) {
    if (features[i].cols() != width) {
      throw ConfigError("image " + std::to_string(i) + " has feature width " +
                        std::to_string(features[i].cols()) + ", expected " +
                        std::to_string(width));
    }
  }
  return width;
}

struct EvalSet {
  std::vector<Matrix> features;
  std::vector<std::vector<int>> sentences;
  std::vector<int> sentence_image;
  std::vector<int> image_ids;
};

EvalSet collect_images(const Dataset& dataset, const std::vector<int>& images) {
  EvalSet set;
  set.image_ids = images;
  for (std::size_t pos = 0; pos < images.size(); ++pos) {
    const auto id = static_cast<std::size_t>(images[pos]);
    set.features.push_back(dataset.features[id]);
    for (int c : dataset.captions_of[id]) {
      set.sentences.push_back(dataset.captions[static_cast<std::size_t>(c)].tokens);
      set.sentence_image.push_back(static_cast<int>(pos));
    }
  }
  if (set.features.empty()) throw ConfigError("selected split is empty");
  if (set.sentences.empty()) throw ConfigError("selected split has no captions");
  return set;
}

const std::vector<int>& pick_split(const SplitIndices& splits, const std::string& name) {
  if (name == "train") return splits.train;
  if (name == "val") return splits.val;
  if (name == "test") return splits.test;
  throw ConfigError("unknown split '" + name + "' (expected train, val, or test)");
}

std::map<std::string, double> attention_meta(const AttentionConfig& cfg) {
  std::map<std::string, double> meta;
  meta["direction"] = cfg.direction == Direction::ImageText ? 1.0 : 0.0;
  meta["pooling"] = static_cast<double>(static_cast<int>(cfg.pooling));
  meta["lambda1"] = cfg.lambda1;
  meta["lambda2"] = cfg.lambda2;
  meta["scorer"] = cfg.scorer == Scorer::SumMax ? 1.0 : 0.0;
  meta["sum_max_cosine"] = cfg.sum_max_cosine ? 1.0 : 0.0;
  meta["max_regions"] = cfg.max_regions ? static_cast<double>(*cfg.max_regions) : -1.0;
  return meta;
}

AttentionConfig attention_from_meta(const std::map<std::string, double>& meta) {
  AttentionConfig cfg;  // library defaults when keys are absent
  auto get = [&](const char* key, double fallback) {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  };
  cfg.direction = get("direction", 1.0) != 0.0 ? Direction::ImageText
                                               : Direction::TextImage;
  const int pooling = static_cast<int>(get("pooling", 1.0));
  if (pooling < 0 || pooling > 3) throw ConfigError("checkpoint: bad pooling code");
  cfg.pooling = static_cast<Pooling>(pooling);
  cfg.lambda1 = get("lambda1", cfg.lambda1);
  cfg.lambda2 = get("lambda2", cfg.lambda2);
  cfg.scorer = get("scorer", 0.0) != 0.0 ? Scorer::SumMax : Scorer::StackedAttention;
  cfg.sum_max_cosine = get("sum_max_cosine", 0.0) != 0.0;
  const double max_regions = get("max_regions", -1.0);
  if (max_regions >= 1.0) cfg.max_regions = static_cast<int>(max_regions);
  cfg.validate();
  return cfg;
}

ordered_json attention_json(const AttentionConfig& cfg) {
  ordered_json j;
  j["direction"] = direction_name(cfg.direction);
  j["pooling"] = pooling_name(cfg.pooling);
  j["lambda1"] = cfg.lambda1;
  j["lambda2"] = cfg.lambda2;
  j["scorer"] = scorer_name(cfg.scorer);
  j["sum_max_cosine"] = cfg.sum_max_cosine;
  if (cfg.max_regions) {
    j["max_regions"] = *cfg.max_regions;
  } else {
    j["max_regions"] = nullptr;
  }
  return j;
}

ordered_json report_json(const RecallReport& r) {
  ordered_json j;
  j["r1"] = r.r1;
  j["r5"] = r.r5;
  j["r10"] = r.r10;
  j["queries"] = r.queries;
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

void write_text_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << data;
  if (!out) throw FormatError(path + ": write failed");
}

std::vector<int> tokenize_caption(const std::string& text, const Vocab& vocab) {
  std::istringstream words(text);
  std::string tok;
  std::vector<int> tokens;
  while (words >> tok) {
    const int idx = vocab.lookup(tok);
    if (idx == Vocab::kUnknown && tok != Vocab::kUnknownToken) {
      std::cerr << "warning: unknown token '" << tok << "' mapped to "
                << Vocab::kUnknownToken << "\n";
    }
    tokens.push_back(idx);
  }
  if (tokens.empty()) throw ConfigError("caption has no tokens");
  return tokens;
}

void check_checkpoint_compat(const ModelParams& params, std::size_t vocab_size,
                             std::size_t feature_width, const std::string& path) {
  const ModelDims dims = dims_of(params);
  if (dims.vocab != vocab_size) {
    throw ConfigError(path + ": checkpoint vocabulary size " +
                      std::to_string(dims.vocab) + " does not match dataset " +
                      std::to_string(vocab_size));
  }
  if (dims.raw_dim != feature_width) {
    throw ConfigError(path + ": checkpoint expects feature width " +
                      std::to_string(dims.raw_dim) + " but data has " +
                      std::to_string(feature_width));
  }
}

std::string format_recall_row(const std::string& name, const RecallReport& sentence,
                              const RecallReport& image) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-24s %10.6f %10.6f %10.6f   %10.6f %10.6f %10.6f",
                name.c_str(), sentence.r1, sentence.r5, sentence.r10, image.r1,
                image.r5, image.r10);
  return buf;
}

const char* kRecallHeader =
    "                          ------ sentence retrieval ------   "
    "-------- image retrieval --------\n"
    "model                            R@1        R@5       R@10   "
    "       R@1        R@5       R@10";

// ---------------------------------------------------------------------------
// Commands

struct GenDataArgs {
  std::string out_dir;
  SyntheticSpec spec;
  int train = 100, val = 25, test = 25;
};

int cmd_gen_data(const GenDataArgs& args) {
  args.spec.validate();
  const SyntheticDataset data = generate_synthetic(args.spec);
  const SplitIndices splits = split_dataset(
      data.dataset.image_count(), SplitCounts{args.train, args.val, args.test},
      args.spec.seed);
  save_dataset(args.out_dir, data.dataset, splits);
  std::cout << "dataset written to " << args.out_dir << "\n"
            << "  images: " << data.dataset.image_count() << " (" << args.train
            << " train / " << args.val << " val / " << args.test << " test)\n"
            << "  captions: " << data.dataset.captions.size() << "\n"
            << "  vocabulary: " << data.dataset.vocab.size() << " tokens\n"
            << "  regions per image: " << args.spec.regions << " of width "
            << args.spec.raw_dim << "\n";
  return 0;
}

struct TrainArgs {
  std::string data_dir, out_path, log_path;
  Settings settings;
};

int cmd_train(const TrainArgs& args) {
  Dataset dataset = load_dataset(args.data_dir);
  const SplitIndices splits = load_splits(
      (std::filesystem::path(args.data_dir) / "splits.json").string(),
      dataset.image_count());
  const std::size_t width = uniform_feature_width(dataset.features);

  ModelDims dims = args.settings.dims;
  dims.raw_dim = width;
  dims.vocab = dataset.vocab.size();

  Rng rng(args.settings.seed);
  ModelParams initial = init_params(dims, rng);

  TrainConfig config;
  config.epochs = args.settings.epochs;
  config.batch_size = args.settings.batch_size;
  config.seed = args.settings.seed;
  config.threads = args.settings.threads;
  config.loss = args.settings.loss;
  config.attention = args.settings.attention;
  config.optimizer = args.settings.optimizer;

  std::ostringstream log;
  const EpochCallback on_epoch = [&](const EpochRecord& r) {
    ordered_json j;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["train_loss"] = r.train_loss;
    j["val"]["sentence"] = report_json(r.val_sentence);
    j["val"]["image"] = report_json(r.val_image);
    j["recall_sum"] = r.recall_sum;
    log << j.dump() << "\n";
    std::cout << "epoch " << r.epoch << "  lr " << r.lr << "  loss " << r.train_loss
              << "  val recall sum " << r.recall_sum << "\n";
  };

  TrainResult result = train(dataset, splits, std::move(initial), config, on_epoch);

  if (!args.log_path.empty()) write_text_file(args.log_path, log.str());

  std::map<std::string, double> meta = attention_meta(config.attention);
  meta["margin"] = config.loss.margin;
  meta["loss_mode"] = config.loss.mode == LossMode::HardestNegatives ? 1.0 : 0.0;
  meta["learning_rate"] = config.optimizer.learning_rate;
  meta["decay_epoch"] = static_cast<double>(config.optimizer.decay_epoch);
  meta["batch_size"] = static_cast<double>(config.batch_size);
  meta["epochs"] = static_cast<double>(config.epochs);
  meta["seed"] = static_cast<double>(config.seed);
  meta["best_epoch"] = static_cast<double>(result.best_epoch);
  save_checkpoint(args.out_path, result.params, meta);

  std::cout << "checkpoint written to " << args.out_path;
  if (result.best_epoch >= 0) {
    std::cout << " (best epoch " << result.best_epoch << ")";
  }
  std::cout << "\n";
  return 0;
}

struct EvalArgs {
  std::string data_dir, split = "test", json_path;
  std::vector<std::string> checkpoints;
  std::size_t fold_size = 0;
  Settings settings;
  bool explicit_attention = false;  // flags/config given: override checkpoint meta
  Overrides attention_overrides;
};

int cmd_eval(const EvalArgs& args) {
  if (args.checkpoints.empty()) throw ConfigError("eval: no checkpoint given");
  Dataset dataset = load_dataset(args.data_dir);
  const SplitIndices splits = load_splits(
      (std::filesystem::path(args.data_dir) / "splits.json").string(),
      dataset.image_count());
  const std::size_t width = uniform_feature_width(dataset.features);
  const EvalSet set = collect_images(dataset, pick_split(splits, args.split));

  std::vector<ScoreGrid> grids;
  std::vector<AttentionConfig> configs;
  for (const std::string& path : args.checkpoints) {
    const Checkpoint ckpt = load_checkpoint(path);
    check_checkpoint_compat(ckpt.params, dataset.vocab.size(), width, path);
    AttentionConfig cfg = attention_from_meta(ckpt.meta);
    Settings tweaked = args.settings;
    tweaked.attention = cfg;
    args.attention_overrides.apply(tweaked);
    tweaked.attention.validate();
    configs.push_back(tweaked.attention);
    grids.push_back(score_grid(set.features, set.sentences, set.sentence_image,
                               ckpt.params, tweaked.attention,
                               args.settings.threads));
  }
  const ScoreGrid grid =
      grids.size() == 1 ? std::move(grids[0])
                        : ensemble_grids(std::span<const ScoreGrid>(grids));

  ordered_json out;
  out["split"] = args.split;
  out["images"] = set.features.size();
  out["sentences"] = set.sentences.size();
  out["checkpoints"] = args.checkpoints;
  out["configs"] = ordered_json::array();
  for (const AttentionConfig& cfg : configs) out["configs"].push_back(attention_json(cfg));

  std::string model_name = grids.size() > 1 || args.checkpoints.size() > 1
                               ? "ensemble"
                               : std::filesystem::path(args.checkpoints[0])
                                     .filename()
                                     .string();

  std::cout << kRecallHeader << "\n";
  if (args.fold_size > 0) {
    const FoldedRecall folded = fold_averaged(grid, args.fold_size);
    std::cout << format_recall_row(model_name, folded.sentence, folded.image) << "\n";
    out["fold_size"] = args.fold_size;
    out["folds"] = folded.folds;
    out["sentence_retrieval"] = report_json(folded.sentence);
    out["image_retrieval"] = report_json(folded.image);
  } else {
    const RecallReport sentence =
        recall_report(grid, RetrievalDirection::SentenceRetrieval);
    const RecallReport image = recall_report(grid, RetrievalDirection::ImageRetrieval);
    std::cout << format_recall_row(model_name, sentence, image) << "\n";
    out["sentence_retrieval"] = report_json(sentence);
    out["image_retrieval"] = report_json(image);
  }

  if (!args.json_path.empty()) write_text_file(args.json_path, out.dump(2) + "\n");
  return 0;
}

struct PairArgs {
  std::string checkpoint, features_path, vocab_path, caption, out_path;
  int image_index = 0;
  bool json = false;
  bool with_trace = false;
  Settings settings;
  Overrides attention_overrides;
};

AttentionTrace traced_pair(const PairArgs& args, AttentionConfig& cfg_out,
                           std::vector<int>& tokens_out, Vocab& vocab_out) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  vocab_out = load_vocab(args.vocab_path);
  const std::vector<Matrix> features = read_features(args.features_path);
  if (args.image_index < 0 ||
      args.image_index >= static_cast<int>(features.size())) {
    throw ConfigError("image index " + std::to_string(args.image_index) +
                      " outside feature file with " +
                      std::to_string(features.size()) + " images");
  }
  const Matrix& raw = features[static_cast<std::size_t>(args.image_index)];
  check_checkpoint_compat(ckpt.params, vocab_out.size(), raw.cols(), args.checkpoint);

  AttentionConfig cfg = attention_from_meta(ckpt.meta);
  Settings tweaked = args.settings;
  tweaked.attention = cfg;
  args.attention_overrides.apply(tweaked);
  tweaked.attention.validate();
  cfg_out = tweaked.attention;

  tokens_out = tokenize_caption(args.caption, vocab_out);
  const Matrix regions = project_regions(raw, ckpt.params);
  const Matrix words = encode_sentence(tokens_out, ckpt.params);
  if (cfg_out.scorer == Scorer::SumMax) {
    AttentionTrace trace;
    trace.score = pair_score(regions, words, cfg_out);
    return trace;
  }
  return score_pair(regions, words, cfg_out);
}

ordered_json trace_json(const AttentionTrace& trace, const AttentionConfig& cfg,
                        const std::vector<int>& tokens, const Vocab& vocab) {
  ordered_json j;
  j["config"] = attention_json(cfg);
  j["words"] = ordered_json::array();
  for (int t : tokens) j["words"].push_back(vocab.token(t));
  j["region_count"] = trace.sim.rows();
  j["weights"] = ordered_json::array();
  for (std::size_t r = 0; r < trace.weights.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (std::size_t c = 0; c < trace.weights.cols(); ++c) {
      row.push_back(trace.weights(r, c));
    }
    j["weights"].push_back(std::move(row));
  }
  j["relevance"] = trace.relevance;
  if (cfg.direction == Direction::TextImage) {
    // Each word attends over regions: weights columns are softmax slices.
    ordered_json arg = ordered_json::array();
    for (std::size_t c = 0; c < trace.weights.cols(); ++c) {
      std::size_t best = 0;
      for (std::size_t r = 1; r < trace.weights.rows(); ++r) {
        if (trace.weights(r, c) > trace.weights(best, c)) best = r;
      }
      arg.push_back(best);
    }
    j["argmax_region_per_word"] = std::move(arg);
  } else {
    ordered_json arg = ordered_json::array();
    for (std::size_t r = 0; r < trace.weights.rows(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < trace.weights.cols(); ++c) {
        if (trace.weights(r, c) > trace.weights(r, best)) best = c;
      }
      arg.push_back(best);
    }
    j["argmax_word_per_region"] = std::move(arg);
  }
  j["score"] = trace.score;
  return j;
}

int cmd_score(const PairArgs& args) {
  AttentionConfig cfg;
  std::vector<int> tokens;
  Vocab vocab;
  const AttentionTrace trace = traced_pair(args, cfg, tokens, vocab);
  if (args.json) {
    ordered_json j;
    j["score"] = trace.score;
    j["config"] = attention_json(cfg);
    if (args.with_trace) {
      if (cfg.scorer == Scorer::SumMax) {
        throw ConfigError("the sum-max scorer has no attention trace");
      }
      j["trace"] = trace_json(trace, cfg, tokens, vocab);
    }
    std::cout << j.dump(2) << "\n";
  } else {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", trace.score);
    std::cout << buf << "\n";
  }
  return 0;
}

int cmd_attend(const PairArgs& args) {
  AttentionConfig cfg;
  std::vector<int> tokens;
  Vocab vocab;
  const AttentionTrace trace = traced_pair(args, cfg, tokens, vocab);
  if (cfg.scorer == Scorer::SumMax) {
    throw ConfigError("the sum-max scorer has no attention trace to export");
  }
  write_text_file(args.out_path, trace_json(trace, cfg, tokens, vocab).dump(2) + "\n");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", trace.score);
  std::cout << "trace written to " << args.out_path << " (score " << buf << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stacked cross-attention image-text matching"};
  app.require_subcommand(1);

  // gen-data ---------------------------------------------------------------
  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--out", gen.out_dir, "Output dataset directory")->required();
  gen_cmd->add_option("--concepts", gen.spec.concepts, "Latent concept count");
  gen_cmd->add_option("--images", gen.spec.images, "Image count");
  gen_cmd->add_option("--regions", gen.spec.regions, "Regions per image");
  gen_cmd->add_option("--captions-per-image", gen.spec.captions_per_image,
                      "Captions per image");
  gen_cmd->add_option("--noise", gen.spec.noise, "Region noise scale");
  gen_cmd->add_option("--raw-dim", gen.spec.raw_dim, "Raw feature width");
  gen_cmd->add_option("--filler-fraction", gen.spec.filler_fraction,
                      "Share of filler tokens per caption");
  gen_cmd->add_option("--train", gen.train, "Training image count");
  gen_cmd->add_option("--val", gen.val, "Validation image count");
  gen_cmd->add_option("--test", gen.test, "Test image count");
  gen_cmd->add_option("--seed", gen.spec.seed, "Random seed");

  // train --------------------------------------------------------------
  TrainArgs train_args;
  std::string train_preset, train_config;
  FlagSlots train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", train_args.data_dir, "Dataset directory")->required();
  train_cmd->add_option("--out", train_args.out_path, "Checkpoint output path")
      ->required();
  train_cmd->add_option("--log", train_args.log_path, "Training log path (JSONL)");
  train_cmd->add_option("--preset", train_preset, "Named configuration preset");
  train_cmd->add_option("--config", train_config, "JSON config file");
  train_flags.attach_scoring(train_cmd);
  train_flags.attach_training(train_cmd);
  train_flags.attach_common(train_cmd);

  // eval ---------------------------------------------------------------
  EvalArgs eval_args;
  std::string eval_preset, eval_config;
  FlagSlots eval_flags;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate retrieval recall");
  eval_cmd->add_option("--data", eval_args.data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoints,
                       "Checkpoint path (repeat or use --ensemble for several)");
  eval_cmd->add_option("--ensemble", eval_args.checkpoints,
                       "Checkpoints whose score grids are averaged");
  eval_cmd->add_option("--split", eval_args.split, "Split to evaluate (train/val/test)");
  eval_cmd->add_option("--fold-size", eval_args.fold_size,
                       "Average recalls over consecutive folds of this many images");
  eval_cmd->add_option("--json", eval_args.json_path, "Machine-readable report path");
  eval_cmd->add_option("--preset", eval_preset, "Named configuration preset");
  eval_cmd->add_option("--config", eval_config, "JSON config file");
  eval_flags.attach_scoring(eval_cmd);
  eval_flags.attach_common(eval_cmd);

  // score / attend -------------------------------------------------------
  PairArgs score_args, attend_args;
  std::string score_preset, score_config, attend_preset, attend_config;
  FlagSlots score_flags, attend_flags;

  CLI::App* score_cmd = app.add_subcommand("score", "Score one image-caption pair");
  score_cmd->add_option("--checkpoint", score_args.checkpoint, "Checkpoint path")
      ->required();
  score_cmd->add_option("--features", score_args.features_path, "Region-feature file")
      ->required();
  score_cmd->add_option("--vocab", score_args.vocab_path, "Vocabulary file")->required();
  score_cmd->add_option("--image-index", score_args.image_index,
                        "Image position within the feature file");
  score_cmd->add_option("--caption", score_args.caption, "Caption text")->required();
  score_cmd->add_flag("--json", score_args.json, "Print a JSON document");
  score_cmd->add_flag("--trace", score_args.with_trace,
                      "Include the attention trace in the JSON output");
  score_cmd->add_option("--preset", score_preset, "Named configuration preset");
  score_cmd->add_option("--config", score_config, "JSON config file");
  score_flags.attach_scoring(score_cmd);
  score_flags.attach_common(score_cmd);

  CLI::App* attend_cmd =
      app.add_subcommand("attend", "Export the attention trace of one pair");
  attend_cmd->add_option("--checkpoint", attend_args.checkpoint, "Checkpoint path")
      ->required();
  attend_cmd->add_option("--features", attend_args.features_path, "Region-feature file")
      ->required();
  attend_cmd->add_option("--vocab", attend_args.vocab_path, "Vocabulary file")
      ->required();
  attend_cmd->add_option("--image-index", attend_args.image_index,
                         "Image position within the feature file");
  attend_cmd->add_option("--caption", attend_args.caption, "Caption text")->required();
  attend_cmd->add_option("--out", attend_args.out_path, "Trace output path")->required();
  attend_cmd->add_option("--preset", attend_preset, "Named configuration preset");
  attend_cmd->add_option("--config", attend_config, "JSON config file");
  attend_flags.attach_scoring(attend_cmd);
  attend_flags.attach_common(attend_cmd);

  try {
    app.parse(argc, argv);

    if (gen_cmd->parsed()) return cmd_gen_data(gen);
    if (train_cmd->parsed()) {
      train_args.settings = resolve_settings(train_preset, train_config, train_flags);
      return cmd_train(train_args);
    }
    if (eval_cmd->parsed()) {
      eval_args.settings = resolve_settings(eval_preset, eval_config, eval_flags);
      std::string unused_preset;
      Overrides file_overrides;
      if (!eval_config.empty()) {
        file_overrides = read_config_file(eval_config, unused_preset);
      }
      // Checkpoint meta is the eval base; config file and flags override it.
      eval_args.attention_overrides = file_overrides;
      const Overrides flag_overrides = eval_flags.to_overrides();
      if (flag_overrides.direction) eval_args.attention_overrides.direction = flag_overrides.direction;
      if (flag_overrides.pooling) eval_args.attention_overrides.pooling = flag_overrides.pooling;
      if (flag_overrides.scorer) eval_args.attention_overrides.scorer = flag_overrides.scorer;
      if (flag_overrides.lambda1) eval_args.attention_overrides.lambda1 = flag_overrides.lambda1;
      if (flag_overrides.lambda2) eval_args.attention_overrides.lambda2 = flag_overrides.lambda2;
      if (flag_overrides.sum_max_cosine) eval_args.attention_overrides.sum_max_cosine = flag_overrides.sum_max_cosine;
      if (flag_overrides.max_regions) eval_args.attention_overrides.max_regions = flag_overrides.max_regions;
      return cmd_eval(eval_args);
    }
    auto finish_pair = [&](PairArgs& pair, const std::string& preset,
                           const std::string& config, FlagSlots& flags) {
      pair.settings = resolve_settings(preset, config, flags);
      std::string unused_preset;
      Overrides file_overrides;
      if (!config.empty()) file_overrides = read_config_file(config, unused_preset);
      pair.attention_overrides = file_overrides;
      const Overrides fo = flags.to_overrides();
      if (fo.direction) pair.attention_overrides.direction = fo.direction;
      if (fo.pooling) pair.attention_overrides.pooling = fo.pooling;
      if (fo.scorer) pair.attention_overrides.scorer = fo.scorer;
      if (fo.lambda1) pair.attention_overrides.lambda1 = fo.lambda1;
      if (fo.lambda2) pair.attention_overrides.lambda2 = fo.lambda2;
      if (fo.sum_max_cosine) pair.attention_overrides.sum_max_cosine = fo.sum_max_cosine;
      if (fo.max_regions) pair.attention_overrides.max_regions = fo.max_regions;
    };
    if (score_cmd->parsed()) {
      finish_pair(score_args, score_preset, score_config, score_flags);
      return cmd_score(score_args);
    }
    if (attend_cmd->parsed()) {
      finish_pair(attend_args, attend_preset, attend_config, attend_flags);
      return cmd_attend(attend_args);
    }
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const VocabError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
