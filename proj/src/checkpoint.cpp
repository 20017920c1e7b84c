#include "prod/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "prod/common.hpp"

namespace prod {

namespace {

constexpr std::uint64_t kMagic = 0x54504b43444f5250ULL;  // "PRODCKPT" little-endian
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kKindDual = 0;
constexpr std::uint8_t kKindCross = 1;

void put_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

void put_u32(std::ostream& os, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(os, bits);
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint8_t get_u8(std::istream& is) {
  const int c = is.get();
  if (c == EOF) throw IoError("checkpoint truncated");
  return static_cast<std::uint8_t>(c);
}

std::uint32_t get_u32(std::istream& is) {
  char buf[4];
  if (!is.read(buf, 4)) throw IoError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  char buf[8];
  if (!is.read(buf, 8)) throw IoError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  const std::uint64_t bits = get_u64(is);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

std::string get_string(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), n)) throw IoError("checkpoint truncated");
  return s;
}

void write_header(std::ostream& os, std::uint8_t kind, const EncoderConfig& cfg) {
  put_u64(os, kMagic);
  put_u32(os, kVersion);
  put_u8(os, kind);
  put_u64(os, cfg.num_layers);
  put_u64(os, cfg.hidden_dim);
  put_u64(os, cfg.vocab_size);
  put_u64(os, cfg.max_query_len);
  put_u64(os, cfg.max_passage_len);
  put_u64(os, cfg.seed);
  put_u8(os, cfg.share_towers ? 1 : 0);
}

std::uint8_t read_header(std::istream& is, EncoderConfig& cfg, const std::string& path) {
  if (get_u64(is) != kMagic) throw IoError("not a checkpoint file: " + path);
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  const std::uint8_t kind = get_u8(is);
  cfg.num_layers = get_u64(is);
  cfg.hidden_dim = get_u64(is);
  cfg.vocab_size = get_u64(is);
  cfg.max_query_len = get_u64(is);
  cfg.max_passage_len = get_u64(is);
  cfg.seed = get_u64(is);
  cfg.share_towers = get_u8(is) != 0;
  return kind;
}

void write_blocks(std::ostream& os, const std::vector<std::pair<std::string, Tensor>>& params) {
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_string(os, name);
    put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) put_u64(os, d);
    for (double v : t.values()) put_f64(os, v);
  }
}

std::map<std::string, Tensor> read_blocks(std::istream& is) {
  std::map<std::string, Tensor> out;
  const std::uint32_t count = get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(is);
    const std::uint32_t ndims = get_u32(is);
    Shape shape(ndims);
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      shape[d] = get_u64(is);
      total *= shape[d];
    }
    std::vector<double> values(total);
    for (double& v : values) v = get_f64(is);
    out.emplace(name, Tensor(std::move(shape), std::move(values), /*requires_grad=*/true));
  }
  return out;
}

Tensor take_block(std::map<std::string, Tensor>& blocks, const std::string& name,
                  const std::string& path) {
  auto it = blocks.find(name);
  if (it == blocks.end()) throw IoError("checkpoint missing block '" + name + "': " + path);
  Tensor t = it->second;
  blocks.erase(it);
  return t;
}

void copy_into(const Tensor& src, Tensor dst) {
  if (src.shape() != dst.shape()) throw IoError("checkpoint block shape mismatch");
  dst.mutable_values() = src.values();
}

}  // namespace

void save_dual_encoder(const std::string& path, const DualEncoder& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  write_header(os, kKindDual, model.config());
  write_blocks(os, model.named_parameters());
  if (!os) throw IoError("checkpoint write failed: " + path);
}

void save_cross_encoder(const std::string& path, const CrossEncoder& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  write_header(os, kKindCross, model.config());
  write_blocks(os, model.named_parameters());
  if (!os) throw IoError("checkpoint write failed: " + path);
}

DualEncoder load_dual_encoder(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  EncoderConfig cfg;
  if (read_header(is, cfg, path) != kKindDual) {
    throw IoError("checkpoint is not a dual encoder: " + path);
  }
  auto blocks = read_blocks(is);
  DualEncoder model(cfg);
  for (auto& [name, param] : model.named_parameters()) {
    copy_into(take_block(blocks, name, path), param);
  }
  if (!blocks.empty()) {
    throw IoError("checkpoint has unexpected block '" + blocks.begin()->first + "': " + path);
  }
  return model;
}

CrossEncoder load_cross_encoder(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  EncoderConfig cfg;
  if (read_header(is, cfg, path) != kKindCross) {
    throw IoError("checkpoint is not a cross encoder: " + path);
  }
  auto blocks = read_blocks(is);
  CrossEncoder model(cfg);
  for (auto& [name, param] : model.named_parameters()) {
    copy_into(take_block(blocks, name, path), param);
  }
  if (!blocks.empty()) {
    throw IoError("checkpoint has unexpected block '" + blocks.begin()->first + "': " + path);
  }
  return model;
}

std::string checkpoint_kind(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  EncoderConfig cfg;
  return read_header(is, cfg, path) == kKindDual ? "dual_encoder" : "cross_encoder";
}

}  // namespace prod
