#include "prod/encoder.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "prod/common.hpp"

namespace prod {

void EncoderConfig::validate() const {
  if (num_layers == 0) throw ConfigError("encoder: num_layers must be >= 1");
  if (hidden_dim == 0) throw ConfigError("encoder: hidden_dim must be >= 1");
  if (vocab_size <= kNumReservedIds) {
    throw ConfigError("encoder: vocab_size must exceed the reserved id count");
  }
  if (max_query_len == 0 || max_passage_len == 0) {
    throw ConfigError("encoder: max sequence lengths must be >= 1");
  }
}

std::size_t tower_param_count(const EncoderConfig& cfg) {
  return cfg.vocab_size * cfg.hidden_dim +
         cfg.num_layers * (cfg.hidden_dim * cfg.hidden_dim + cfg.hidden_dim);
}

Tower make_tower(const EncoderConfig& cfg, RngStream& rng) {
  const std::size_t d = cfg.hidden_dim;
  Tower tower;
  tower.embedding = Tensor::randn({cfg.vocab_size, d}, 0.5, rng, /*requires_grad=*/true);
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    tower.layer_weights.push_back(Tensor::randn({d, d}, w_std, rng, true));
    tower.layer_biases.push_back(Tensor::zeros({d}, true));
  }
  return tower;
}

Tensor encode(Tape& tape, const Tower& tower, const TokenSequence& seq) {
  Tensor x = embedding_lookup(tape, tower.embedding, seq.ids);
  for (std::size_t l = 0; l < tower.layer_weights.size(); ++l) {
    Tensor h = matmul(tape, x, tower.layer_weights[l]);
    h = add_rowvec(tape, h, tower.layer_biases[l]);
    x = add(tape, tanh_op(tape, h), x);
  }
  return mean_rows(tape, x);
}

std::vector<double> encode_raw(const Tower& tower, const TokenSequence& seq) {
  const std::size_t d = tower.embedding.dim(1);
  const std::size_t len = seq.ids.size();
  const auto& emb = tower.embedding.values();
  std::vector<double> x(len * d);
  for (std::size_t i = 0; i < len; ++i) {
    const double* row = emb.data() + static_cast<std::size_t>(seq.ids[i]) * d;
    std::copy(row, row + d, x.begin() + i * d);
  }
  std::vector<double> h(len * d);
  for (std::size_t l = 0; l < tower.layer_weights.size(); ++l) {
    const auto& w = tower.layer_weights[l].values();
    const auto& b = tower.layer_biases[l].values();
    // Same loop order as the taped ops so both paths agree bit for bit.
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < d; ++t) acc += x[i * d + t] * w[t * d + j];
        h[i * d + j] = acc;
      }
    }
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < d; ++j)
        x[i * d + j] = std::tanh(h[i * d + j] + b[j]) + x[i * d + j];
  }
  std::vector<double> pooled(d, 0.0);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < d; ++j) pooled[j] += x[i * d + j];
  const double inv = 1.0 / static_cast<double>(len);
  for (double& v : pooled) v *= inv;
  return pooled;
}

// ---- dual encoder ----------------------------------------------------------

DualEncoder::DualEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  RngStream q_rng(derive_seed(cfg.seed, "dual.query_tower"));
  query_tower_ = make_tower(cfg_, q_rng);
  if (cfg_.share_towers) {
    passage_tower_ = query_tower_;
  } else {
    RngStream p_rng(derive_seed(cfg.seed, "dual.passage_tower"));
    passage_tower_ = make_tower(cfg_, p_rng);
  }
}

TokenSequence DualEncoder::tokenize_query(std::string_view text) const {
  return tokenize(text, cfg_.max_query_len, cfg_.vocab_size);
}

TokenSequence DualEncoder::tokenize_passage(std::string_view text) const {
  return tokenize(text, cfg_.max_passage_len, cfg_.vocab_size);
}

Tensor DualEncoder::encode_query(Tape& tape, const TokenSequence& q) const {
  return encode(tape, query_tower_, q);
}

Tensor DualEncoder::encode_passage(Tape& tape, const TokenSequence& p) const {
  return encode(tape, passage_tower_, p);
}

std::vector<double> DualEncoder::encode_query_raw(const TokenSequence& q) const {
  return encode_raw(query_tower_, q);
}

std::vector<double> DualEncoder::encode_passage_raw(const TokenSequence& p) const {
  return encode_raw(passage_tower_, p);
}

Tensor DualEncoder::score(Tape& tape, const TokenSequence& q, const TokenSequence& p) const {
  return dot(tape, encode(tape, query_tower_, q), encode(tape, passage_tower_, p));
}

double DualEncoder::score_raw(const TokenSequence& q, const TokenSequence& p) const {
  const std::vector<double> eq = encode_raw(query_tower_, q);
  const std::vector<double> ep = encode_raw(passage_tower_, p);
  double acc = 0.0;
  for (std::size_t i = 0; i < eq.size(); ++i) acc += eq[i] * ep[i];
  return acc;
}

namespace {

void append_tower_params(const std::string& prefix, const Tower& tower,
                         std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".embedding", tower.embedding);
  for (std::size_t l = 0; l < tower.layer_weights.size(); ++l) {
    out.emplace_back(prefix + ".layer" + std::to_string(l) + ".weight", tower.layer_weights[l]);
    out.emplace_back(prefix + ".layer" + std::to_string(l) + ".bias", tower.layer_biases[l]);
  }
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> DualEncoder::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  append_tower_params("query_tower", query_tower_, out);
  if (!cfg_.share_towers) append_tower_params("passage_tower", passage_tower_, out);
  return out;
}

std::vector<Tensor> DualEncoder::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

namespace {

Tower clone_tower(const Tower& tower) {
  Tower out;
  out.embedding = tower.embedding.clone(true);
  for (const Tensor& w : tower.layer_weights) out.layer_weights.push_back(w.clone(true));
  for (const Tensor& b : tower.layer_biases) out.layer_biases.push_back(b.clone(true));
  return out;
}

}  // namespace

DualEncoder DualEncoder::clone() const {
  DualEncoder out;
  out.cfg_ = cfg_;
  out.query_tower_ = clone_tower(query_tower_);
  out.passage_tower_ = cfg_.share_towers ? out.query_tower_ : clone_tower(passage_tower_);
  return out;
}

// ---- cross encoder ---------------------------------------------------------

CrossEncoder::CrossEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  RngStream rng(derive_seed(cfg.seed, "cross.joint_tower"));
  joint_tower_ = make_tower(cfg_, rng);
  RngStream w_rng(derive_seed(cfg.seed, "cross.projection"));
  projection_ = Tensor::randn({cfg_.hidden_dim}, 1.0 / std::sqrt(double(cfg_.hidden_dim)), w_rng,
                              /*requires_grad=*/true);
}

TokenSequence CrossEncoder::joint_sequence(const TokenSequence& q, const TokenSequence& p) const {
  const std::size_t joint_max = cfg_.max_query_len + 1 + cfg_.max_passage_len;
  TokenSequence joint;
  joint.ids = q.ids;
  if (joint.ids.size() > cfg_.max_query_len) joint.ids.resize(cfg_.max_query_len);
  joint.ids.push_back(kSepId);
  const std::size_t room = joint_max - joint.ids.size();
  for (std::size_t i = 0; i < p.ids.size() && i < room; ++i) joint.ids.push_back(p.ids[i]);
  joint.original_length = q.original_length + 1 + p.original_length;
  return joint;
}

TokenSequence CrossEncoder::tokenize_query(std::string_view text) const {
  return tokenize(text, cfg_.max_query_len, cfg_.vocab_size);
}

TokenSequence CrossEncoder::tokenize_passage(std::string_view text) const {
  return tokenize(text, cfg_.max_passage_len, cfg_.vocab_size);
}

Tensor CrossEncoder::score(Tape& tape, const TokenSequence& q, const TokenSequence& p) const {
  return dot(tape, projection_, encode(tape, joint_tower_, joint_sequence(q, p)));
}

double CrossEncoder::score_raw(const TokenSequence& q, const TokenSequence& p) const {
  const std::vector<double> e = encode_raw(joint_tower_, joint_sequence(q, p));
  const auto& w = projection_.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) acc += w[i] * e[i];
  return acc;
}

std::vector<std::pair<std::string, Tensor>> CrossEncoder::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  append_tower_params("joint_tower", joint_tower_, out);
  out.emplace_back("projection", projection_);
  return out;
}

std::vector<Tensor> CrossEncoder::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

CrossEncoder CrossEncoder::clone() const {
  CrossEncoder out;
  out.cfg_ = cfg_;
  out.joint_tower_ = clone_tower(joint_tower_);
  out.projection_ = projection_.clone(true);
  return out;
}

std::uint64_t parameter_checksum(const std::vector<Tensor>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& p : params) {
    for (double v : p.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffULL;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace prod
