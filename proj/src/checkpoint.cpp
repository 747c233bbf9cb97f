#include "mpcfg/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mpcfg {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

std::uint32_t swap32(std::uint32_t bits) {
  return ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) |
         ((bits >> 24) & 0xffu);
}

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  if constexpr (std::endian::native == std::endian::big) bits = swap32(bits);
  out.write(reinterpret_cast<const char*>(&bits), 4);
}

template <typename T>
T read_le(std::istream& in, const std::string& path) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits = 0;
  if (!in.read(reinterpret_cast<char*>(&bits), 4))
    throw std::runtime_error("checkpoint truncated: " + path);
  if constexpr (std::endian::native == std::endian::big) bits = swap32(bits);
  T value;
  std::memcpy(&value, &bits, 4);
  return value;
}

void write_u16(std::ostream& out, std::uint16_t value) {
  unsigned char bytes[2] = {static_cast<unsigned char>(value & 0xffu),
                            static_cast<unsigned char>(value >> 8)};
  out.write(reinterpret_cast<const char*>(bytes), 2);
}

std::uint16_t read_u16(std::istream& in, const std::string& path) {
  unsigned char bytes[2];
  if (!in.read(reinterpret_cast<char*>(bytes), 2))
    throw std::runtime_error("checkpoint truncated: " + path);
  return static_cast<std::uint16_t>(bytes[0] | (bytes[1] << 8));
}

}  // namespace

void write_checkpoint(const std::string& path, const GrammarConfig& cfg,
                      const ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write("MPCF", 4);
  write_le<std::uint32_t>(out, kCheckpointVersion);
  for (int field : {cfg.num_nonterminals, cfg.num_preterminals, cfg.vocab_size, cfg.symbol_dim,
                    cfg.z_dim, cfg.hidden_dim})
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(field));
  for (const auto& name : store.names()) {
    const Tensor& tensor = store.get(name);
    if (name.size() > 0xffffu) throw std::invalid_argument("tensor name too long: " + name);
    write_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = tensor.shape();
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const Array2d& vals = tensor.array();
    for (int i = 0; i < vals.rows(); ++i)
      for (int j = 0; j < vals.cols(); ++j) write_le<float>(out, static_cast<float>(vals(i, j)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, "MPCF", 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  auto version = read_le<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version: " + path);
  Checkpoint ckpt;
  ckpt.config.num_nonterminals = static_cast<int>(read_le<std::uint32_t>(in, path));
  ckpt.config.num_preterminals = static_cast<int>(read_le<std::uint32_t>(in, path));
  ckpt.config.vocab_size = static_cast<int>(read_le<std::uint32_t>(in, path));
  ckpt.config.symbol_dim = static_cast<int>(read_le<std::uint32_t>(in, path));
  ckpt.config.z_dim = static_cast<int>(read_le<std::uint32_t>(in, path));
  ckpt.config.hidden_dim = static_cast<int>(read_le<std::uint32_t>(in, path));
  while (true) {
    int peek = in.peek();
    if (peek == std::char_traits<char>::eof()) break;
    std::uint16_t name_len = read_u16(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw std::runtime_error("checkpoint truncated: " + path);
    auto rank = read_le<std::uint32_t>(in, path);
    if (rank > 2) throw std::runtime_error("checkpoint tensor rank > 2: " + path);
    std::vector<int> shape;
    long count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int>(read_le<std::uint32_t>(in, path)));
      count *= shape.back();
    }
    std::vector<double> values;
    values.reserve(static_cast<size_t>(count));
    for (long i = 0; i < count; ++i) values.push_back(read_le<float>(in, path));
    ckpt.params.add(name, Tensor::from_flat(shape, values));
  }
  return ckpt;
}

}  // namespace mpcfg
