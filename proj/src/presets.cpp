#include "xmatch/presets.hpp"

namespace xmatch {

namespace {

Preset make_preset(std::string name, std::string summary, Direction direction,
                   Pooling pooling, double lambda1, double lambda2, Scorer scorer,
                   double lr, int decay_epoch, int epochs, int batch_size,
                   ModelDims dims) {
  Preset p;
  p.name = std::move(name);
  p.summary = std::move(summary);
  p.attention.direction = direction;
  p.attention.pooling = pooling;
  p.attention.lambda1 = lambda1;
  p.attention.lambda2 = lambda2;
  p.attention.scorer = scorer;
  p.loss.margin = 0.2;
  p.loss.mode = LossMode::HardestNegatives;
  p.optimizer.learning_rate = lr;
  p.optimizer.decay_epoch = decay_epoch;
  p.optimizer.decay_factor = 0.1;
  p.optimizer.clip_norm = 2.0;
  p.epochs = epochs;
  p.batch_size = batch_size;
  p.dims = dims;
  return p;
}

std::vector<Preset> build_presets() {
  const ModelDims full{2048, 1024, 300, 0};
  const ModelDims toy{64, 64, 32, 0};
  const auto kAttention = Scorer::StackedAttention;
  const auto kSumMax = Scorer::SumMax;

  std::vector<Preset> presets;
  // Flickr30K profile: lr 2e-4 decayed at epoch 15, 30 epochs, batch 128.
  presets.push_back(make_preset("flickr-ti-avg", "text-image, AVG pooling, lambda1=9",
                                Direction::TextImage, Pooling::AVG, 9.0, 5.0,
                                kAttention, 2e-4, 15, 30, 128, full));
  presets.push_back(make_preset("flickr-ti-lse",
                                "text-image, LSE pooling, lambda1=9, lambda2=6",
                                Direction::TextImage, Pooling::LSE, 9.0, 6.0,
                                kAttention, 2e-4, 15, 30, 128, full));
  presets.push_back(make_preset("flickr-it-avg", "image-text, AVG pooling, lambda1=4",
                                Direction::ImageText, Pooling::AVG, 4.0, 5.0,
                                kAttention, 2e-4, 15, 30, 128, full));
  presets.push_back(make_preset(
      "flickr-it-avg-l10", "image-text, AVG pooling, lambda1=10 variant",
      Direction::ImageText, Pooling::AVG, 10.0, 5.0, kAttention, 2e-4, 15, 30, 128,
      full));
  presets.push_back(make_preset("flickr-it-lse",
                                "image-text, LSE pooling, lambda1=4, lambda2=5",
                                Direction::ImageText, Pooling::LSE, 4.0, 5.0,
                                kAttention, 2e-4, 15, 30, 128, full));

  // MS-COCO profile: lr 5e-4 decayed at epoch 10, 20 epochs, batch 128.
  presets.push_back(make_preset("coco-ti-avg", "text-image, AVG pooling, lambda1=9",
                                Direction::TextImage, Pooling::AVG, 9.0, 5.0,
                                kAttention, 5e-4, 10, 20, 128, full));
  presets.push_back(make_preset("coco-ti-lse",
                                "text-image, LSE pooling, lambda1=9, lambda2=6",
                                Direction::TextImage, Pooling::LSE, 9.0, 6.0,
                                kAttention, 5e-4, 10, 20, 128, full));
  presets.push_back(make_preset("coco-it-avg", "image-text, AVG pooling, lambda1=4",
                                Direction::ImageText, Pooling::AVG, 4.0, 5.0,
                                kAttention, 5e-4, 10, 20, 128, full));
  presets.push_back(make_preset("coco-it-lse",
                                "image-text, LSE pooling, lambda1=4, lambda2=20",
                                Direction::ImageText, Pooling::LSE, 4.0, 20.0,
                                kAttention, 5e-4, 10, 20, 128, full));

  // Desk-scale profile: lr 2e-3 decayed at epoch 10, 20 epochs, batch 16.
  presets.push_back(make_preset("toy-it-avg", "toy dims, image-text, AVG pooling",
                                Direction::ImageText, Pooling::AVG, 4.0, 5.0,
                                kAttention, 2e-3, 10, 20, 16, toy));
  presets.push_back(make_preset("toy-ti-avg", "toy dims, text-image, AVG pooling",
                                Direction::TextImage, Pooling::AVG, 9.0, 5.0,
                                kAttention, 2e-3, 10, 20, 16, toy));
  presets.push_back(make_preset("toy-it-lse", "toy dims, image-text, LSE pooling",
                                Direction::ImageText, Pooling::LSE, 4.0, 5.0,
                                kAttention, 2e-3, 10, 20, 16, toy));
  presets.push_back(make_preset("toy-ti-lse", "toy dims, text-image, LSE pooling",
                                Direction::TextImage, Pooling::LSE, 9.0, 6.0,
                                kAttention, 2e-3, 10, 20, 16, toy));
  presets.push_back(make_preset("toy-summax-it", "toy dims, sum-max baseline, image-text",
                                Direction::ImageText, Pooling::AVG, 4.0, 5.0, kSumMax,
                                2e-3, 10, 20, 16, toy));
  presets.push_back(make_preset("toy-summax-ti", "toy dims, sum-max baseline, text-image",
                                Direction::TextImage, Pooling::AVG, 9.0, 5.0, kSumMax,
                                2e-3, 10, 20, 16, toy));
  return presets;
}

}  // namespace

const std::vector<Preset>& all_presets() {
  static const std::vector<Preset> presets = build_presets();
  return presets;
}

const Preset& find_preset(const std::string& name) {
  for (const Preset& p : all_presets()) {
    if (p.name == name) return p;
  }
  std::string known;
  for (const Preset& p : all_presets()) {
    if (!known.empty()) known += ", ";
    known += p.name;
  }
  throw ConfigError("unknown preset '" + name + "'; known presets: " + known);
}

}  // namespace xmatch
