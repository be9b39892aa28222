#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "melody/errors.hpp"
#include "melody/seq2seq.hpp"

namespace melody {

namespace {

constexpr char kMagic[8] = {'M', 'L', 'D', 'Y', 'C', 'K', 'P', 'T'};
// Guards against absurd allocations from a damaged length field.
constexpr std::uint64_t kMaxBlob = 1ULL << 31;

void put_u32(std::ostream& out, std::uint32_t value) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes, 4);
}

void put_f64(std::ostream& out, double value) {
  const auto bits = std::bit_cast<std::uint64_t>(value);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

void put_string(std::ostream& out, const std::string& text) {
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(char* out, std::size_t n, const char* what) {
    in_.read(out, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw CorruptCheckpoint(std::string("truncated while reading ") + what);
    }
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  double f64(const char* what) {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8, what);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
    return std::bit_cast<double>(bits);
  }

  std::string string(const char* what) {
    const std::uint32_t n = u32(what);
    if (n > kMaxBlob) throw CorruptCheckpoint(std::string("implausible length for ") + what);
    std::string text(n, '\0');
    bytes(text.data(), n, what);
    return text;
  }

 private:
  std::istream& in_;
};

std::string join_tokens(const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < vocab.tokens().size(); ++i) {
    if (i) out += '\n';
    out += vocab.tokens()[i];
  }
  return out;
}

Vocabulary split_tokens(const std::string& text, const char* side) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) tokens.push_back(line);
  try {
    return Vocabulary(std::move(tokens));
  } catch (const std::invalid_argument& e) {
    throw CorruptCheckpoint(std::string(side) + " vocabulary: " + e.what());
  }
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model,
                     const std::map<std::string, std::string>& extra) {
  std::map<std::string, std::string> metadata = extra;
  for (const auto& [key, value] : model.config.to_map()) metadata["config." + key] = value;
  metadata["vocab.source"] = join_tokens(model.source_vocab);
  metadata["vocab.target"] = join_tokens(model.target_vocab);

  out.write(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [key, value] : metadata) {
    put_string(out, key);
    put_string(out, value);
  }
  const auto& tensors = model.params.tensors();
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, value] : tensors) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(value.rows()));
    put_u32(out, static_cast<std::uint32_t>(value.cols()));
    for (Eigen::Index i = 0; i < value.size(); ++i) put_f64(out, value.data()[i]);
  }
  if (!out) throw std::runtime_error("failed to write checkpoint");
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::map<std::string, std::string>& extra) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  save_checkpoint(out, model, extra);
}

LoadedCheckpoint load_checkpoint(std::istream& in) {
  Reader reader(in);
  char magic[8];
  reader.bytes(magic, sizeof magic, "magic");
  if (!std::equal(magic, magic + 8, kMagic)) throw CorruptCheckpoint("bad magic");
  const std::uint32_t version = reader.u32("version");
  if (version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }

  LoadedCheckpoint loaded;
  const std::uint32_t entries = reader.u32("metadata count");
  for (std::uint32_t i = 0; i < entries; ++i) {
    std::string key = reader.string("metadata key");
    loaded.metadata[key] = reader.string("metadata value");
  }

  std::map<std::string, std::string> config_values;
  for (const auto& [key, value] : loaded.metadata) {
    if (key.rfind("config.", 0) == 0) config_values[key.substr(7)] = value;
  }
  try {
    loaded.model.config.apply(config_values);
    loaded.model.config.validate();
  } catch (const ConfigError& e) {
    throw CorruptCheckpoint(e.what());
  }
  const auto vocab = [&](const char* key) -> const std::string& {
    auto it = loaded.metadata.find(key);
    if (it == loaded.metadata.end()) throw CorruptCheckpoint(std::string("missing ") + key);
    return it->second;
  };
  loaded.model.source_vocab = split_tokens(vocab("vocab.source"), "source");
  loaded.model.target_vocab = split_tokens(vocab("vocab.target"), "target");
  loaded.metadata.erase("vocab.source");
  loaded.metadata.erase("vocab.target");

  const ModelParams expected = init_params(loaded.model.config);
  const std::uint32_t count = reader.u32("tensor count");
  if (count != expected.tensors().size()) {
    throw CorruptCheckpoint("tensor count " + std::to_string(count) + " does not match config");
  }
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = reader.string("tensor name");
    const std::uint32_t rows = reader.u32("rows");
    const std::uint32_t cols = reader.u32("cols");
    if (!expected.contains(name) || expected.at(name).rows() != rows ||
        expected.at(name).cols() != cols) {
      throw CorruptCheckpoint("unexpected tensor '" + name + "'");
    }
    Matrixd value(rows, cols);
    for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = reader.f64("tensor data");
    loaded.model.params.set(name, std::move(value));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CorruptCheckpoint("trailing bytes after last tensor");
  }
  if (loaded.model.source_vocab.size() != loaded.model.config.source_vocab_size ||
      loaded.model.target_vocab.size() != loaded.model.config.target_vocab_size) {
    throw CorruptCheckpoint("vocabulary sizes do not match config");
  }
  return loaded;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptCheckpoint("cannot open " + path.string());
  return load_checkpoint(in);
}

}  // namespace melody
