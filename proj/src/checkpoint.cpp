#include "xmatch/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

namespace xmatch {

namespace {

constexpr char kMagic[4] = {'X', 'M', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

// Cursor over a fully loaded file, failing with the offset of the short read.
struct Reader {
  const std::string& data;
  const std::string& path;
  std::size_t pos = 0;

  void require(std::size_t count, const char* what) const {
    if (pos + count > data.size()) {
      throw FormatError(path + ": truncated " + what + ", need " +
                            std::to_string(count) + " bytes but only " +
                            std::to_string(data.size() - pos) + " remain",
                        pos);
    }
  }

  std::uint32_t u32(const char* what) {
    require(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i]))
           << (8 * i);
    }
    pos += 4;
    return v;
  }

  double f64(const char* what) {
    require(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i]))
              << (8 * i);
    }
    pos += 8;
    return std::bit_cast<double>(bits);
  }

  std::string bytes(std::size_t count, const char* what) {
    require(count, what);
    std::string out = data.substr(pos, count);
    pos += count;
    return out;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open for reading");
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
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

}  // namespace

void save_matrices(const std::string& path, const NamedMatrices& entries) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, m] : entries) {
    if (name.empty()) throw DomainError("save_matrices: empty matrix name");
    if (name.size() > std::numeric_limits<std::uint32_t>::max()) {
      throw DomainError("save_matrices: name too long");
    }
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) put_f64(out, v);
  }
  write_file_atomic(path, out);
}

NamedMatrices load_matrices(const std::string& path) {
  const std::string data = read_file(path);
  Reader r{data, path};

  const std::string magic = r.bytes(4, "magic");
  if (magic != std::string(kMagic, sizeof(kMagic))) {
    throw FormatError(path + ": bad magic, not a parameter file", 0);
  }
  const std::size_t version_at = r.pos;
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version),
                      version_at);
  }
  const std::uint32_t count = r.u32("entry count");

  NamedMatrices entries;
  entries.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t name_len = r.u32("name length");
    const std::size_t name_at = r.pos;
    const std::string name = r.bytes(name_len, "name");
    if (name.empty()) {
      throw FormatError(path + ": entry " + std::to_string(e) + " has an empty name",
                        name_at);
    }
    const std::uint32_t rows = r.u32("row count");
    const std::uint32_t cols = r.u32("column count");
    const std::size_t values_at = r.pos;
    std::vector<double> values(static_cast<std::size_t>(rows) * cols);
    for (double& v : values) v = r.f64("matrix values");
    try {
      entries.emplace_back(name, Matrix(rows, cols, std::move(values)));
    } catch (const NumericError&) {
      throw FormatError(path + ": non-finite value in matrix " + name, values_at);
    }
  }
  if (r.pos != data.size()) {
    throw FormatError(path + ": " + std::to_string(data.size() - r.pos) +
                          " trailing bytes after the last entry",
                      r.pos);
  }
  return entries;
}

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const std::map<std::string, double>& meta) {
  params.validate();
  NamedMatrices entries;
  for (const auto& [name, m] : params.entries()) entries.emplace_back(name, *m);
  for (const auto& [key, value] : meta) {
    entries.emplace_back("meta." + key, Matrix(1, 1, {value}));
  }
  save_matrices(path, entries);
}

Checkpoint load_checkpoint(const std::string& path) {
  NamedMatrices entries = load_matrices(path);
  Checkpoint ckpt;
  std::map<std::string, Matrix*> slots;
  for (auto& [name, m] : ckpt.params.entries()) slots[name] = m;

  std::map<std::string, bool> seen;
  for (auto& [name, m] : entries) {
    if (name.rfind("meta.", 0) == 0) {
      if (m.rows() != 1 || m.cols() != 1) {
        throw FormatError(path + ": meta entry " + name + " must be 1x1");
      }
      ckpt.meta[name.substr(5)] = m(0, 0);
      continue;
    }
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw FormatError(path + ": unknown parameter " + name);
    }
    if (seen[name]) {
      throw FormatError(path + ": duplicate parameter " + name);
    }
    seen[name] = true;
    *it->second = std::move(m);
  }
  for (const auto& [name, m] : slots) {
    if (!seen[name]) {
      throw FormatError(path + ": missing parameter " + name);
    }
  }
  ckpt.params.validate();
  return ckpt;
}

}  // namespace xmatch
