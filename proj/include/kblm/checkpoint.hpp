#pragma once

// Checkpoint layout (all integers little-endian):
//   8 bytes   magic "KBLMCKPT"
//   8 bytes   u64 length L of the JSON header
//   L bytes   JSON header: {"version", "config", "vocab_sha256", "vocab", "blocks":[{name,rows,cols}]}
//   then, for each block in header order, rows*cols IEEE-754 doubles in column-major order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <openssl/evp.h>

#include "json.hpp"

#include "kblm/model.hpp"

namespace kblm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'K', 'B', 'L', 'M', 'C', 'K', 'P', 'T'};

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream out;
  for (unsigned i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return out.str();
}

/// SHA-256 over the vocabulary entries in id order, each terminated by '\n'.
inline std::string vocabulary_hash(const Vocabulary& v) {
  std::string buf;
  for (const auto& e : v.entries()) {
    buf += e;
    buf.push_back('\n');
  }
  return sha256_hex(buf);
}

inline void save_model(const LanguageModel& model, std::ostream& os) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : model.layout().blocks) blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  const nlohmann::json header = {{"version", kCheckpointVersion},
                                 {"config", model.config()},
                                 {"vocab_sha256", vocabulary_hash(model.vocab())},
                                 {"vocab", model.vocab().entries()},
                                 {"blocks", blocks}};
  const std::string h = header.dump();
  const std::uint64_t len = h.size();
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  const auto p = model.params();
  os.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
  if (!os) throw DataError("failed to write checkpoint");
}

/// Writes to a sibling temporary and renames, so a failed save never clobbers a good file.
inline void save_model(const LanguageModel& model, const std::string& path) {
  const std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp + " for writing");
    save_model(model, out);
  }
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json read_checkpoint_header(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw DataError("not a checkpoint file (bad magic)");
  std::uint64_t len = 0;
  if (!is.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 30))
    throw DataError("truncated checkpoint header");
  std::string h(len, '\0');
  if (!is.read(h.data(), static_cast<std::streamsize>(len))) throw DataError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (header.value("version", 0) != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + header.value("version", nlohmann::json()).dump());
  return header;
}

/// Loads a checkpoint. When `expected_vocab` is given its hash must match the file's.
inline LanguageModel load_model(std::istream& is, const Vocabulary* expected_vocab = nullptr) {
  const auto header = read_checkpoint_header(is);
  ModelConfig config;
  std::vector<std::string> entries;
  std::string hash;
  try {
    config = header.at("config").get<ModelConfig>();
    entries = header.at("vocab").get<std::vector<std::string>>();
    hash = header.at("vocab_sha256").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("incomplete checkpoint header: ") + e.what());
  }
  if (entries.size() < 3) throw DataError("checkpoint vocabulary is too small");
  entries.resize(entries.size() - 3);
  Vocabulary vocab(std::move(entries));
  if (vocabulary_hash(vocab) != hash) throw DataError("checkpoint vocabulary hash mismatch (corrupt file)");
  if (expected_vocab && vocabulary_hash(*expected_vocab) != hash)
    throw DataError("checkpoint was trained with a different vocabulary");

  LanguageModel model(config, std::move(vocab));
  const auto& blocks = header.at("blocks");
  if (blocks.size() != model.layout().blocks.size()) throw DataError("checkpoint block list does not match config");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = model.layout().blocks[i];
    if (blocks[i].at("name") != b.name || blocks[i].at("rows") != b.rows || blocks[i].at("cols") != b.cols)
      throw DataError("checkpoint block '" + b.name + "' has an unexpected shape");
  }
  auto p = model.params();
  if (!is.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double))))
    throw DataError("truncated checkpoint parameters");
  return model;
}

inline LanguageModel load_model(const std::string& path, const Vocabulary* expected_vocab = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return load_model(in, expected_vocab);
}

}  // namespace kblm
