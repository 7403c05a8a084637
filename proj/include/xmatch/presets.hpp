#pragma once

#include <string>
#include <vector>

#include "xmatch/learning.hpp"

namespace xmatch {

// A named bundle of attention, loss, optimizer, and model settings.
struct Preset {
  std::string name;
  std::string summary;
  AttentionConfig attention;
  LossConfig loss;
  OptimizerConfig optimizer;
  int epochs = 0;
  int batch_size = 0;
  ModelDims dims;  // vocab filled in from the dataset
};

const std::vector<Preset>& all_presets();
const Preset& find_preset(const std::string& name);  // ConfigError when unknown

}  // namespace xmatch
