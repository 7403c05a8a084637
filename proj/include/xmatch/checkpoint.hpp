#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xmatch/encoders.hpp"
#include "xmatch/matrix.hpp"

namespace xmatch {

using NamedMatrices = std::vector<std::pair<std::string, Matrix>>;

// Versioned binary container: magic "XMCP", version, then each matrix as
// (name, rows, cols, 64-bit little-endian values). Round trips byte-exactly;
// writes go through a temp file + rename.
void save_matrices(const std::string& path, const NamedMatrices& entries);
NamedMatrices load_matrices(const std::string& path);

struct Checkpoint {
  ModelParams params;
  std::map<std::string, double> meta;  // scalar run settings, e.g. lambda1
};

// Model parameters under their canonical entry names plus meta scalars as
// 1x1 matrices named "meta.<key>".
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const std::map<std::string, double>& meta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace xmatch
