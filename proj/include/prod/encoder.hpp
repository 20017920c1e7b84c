#ifndef PROD_ENCODER_HPP_
#define PROD_ENCODER_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "prod/tensor.hpp"
#include "prod/tokenizer.hpp"

namespace prod {

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_dim = 32;
  std::size_t vocab_size = 4096;
  std::size_t max_query_len = 16;
  std::size_t max_passage_len = 32;
  std::uint64_t seed = 42;
  // The query and passage encoders are separate towers by default; sharing
  // is available for experiments that want a Siamese setup.
  bool share_towers = false;

  void validate() const;
};

// Trainable parameter count for a single tower of the given config.
std::size_t tower_param_count(const EncoderConfig& cfg);

// One encoder stack: embedding table plus num_layers blocks of
// x -> tanh(x W + b) + x, mean-pooled over positions at the end.
struct Tower {
  Tensor embedding;                   // [vocab, d]
  std::vector<Tensor> layer_weights;  // num_layers x [d, d]
  std::vector<Tensor> layer_biases;   // num_layers x [d]
};

Tower make_tower(const EncoderConfig& cfg, RngStream& rng);

// Differentiable forward pass. Output is a [d] vector.
Tensor encode(Tape& tape, const Tower& tower, const TokenSequence& seq);

// Same math on raw values, no tape. Bit-identical to encode(); used by the
// parallel corpus/search kernels.
std::vector<double> encode_raw(const Tower& tower, const TokenSequence& seq);

class DualEncoder {
 public:
  explicit DualEncoder(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  const Tower& query_tower() const { return query_tower_; }
  const Tower& passage_tower() const { return passage_tower_; }

  TokenSequence tokenize_query(std::string_view text) const;
  TokenSequence tokenize_passage(std::string_view text) const;

  Tensor encode_query(Tape& tape, const TokenSequence& q) const;
  Tensor encode_passage(Tape& tape, const TokenSequence& p) const;
  std::vector<double> encode_query_raw(const TokenSequence& q) const;
  std::vector<double> encode_passage_raw(const TokenSequence& p) const;

  // Inner product of the two tower embeddings (differentiable).
  Tensor score(Tape& tape, const TokenSequence& q, const TokenSequence& p) const;
  double score_raw(const TokenSequence& q, const TokenSequence& p) const;

  // Stable order: query tower blocks, then passage tower blocks (omitted
  // when towers are shared).
  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  DualEncoder clone() const;

 private:
  DualEncoder() = default;
  EncoderConfig cfg_;
  Tower query_tower_;
  Tower passage_tower_;

  friend DualEncoder load_dual_encoder(const std::string& path);
};

class CrossEncoder {
 public:
  explicit CrossEncoder(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  const Tower& joint_tower() const { return joint_tower_; }
  const Tensor& projection() const { return projection_; }

  // [query ; SEP ; passage], passage side truncated first so the joint
  // sequence fits max_query_len + 1 + max_passage_len.
  TokenSequence joint_sequence(const TokenSequence& q, const TokenSequence& p) const;
  TokenSequence tokenize_query(std::string_view text) const;
  TokenSequence tokenize_passage(std::string_view text) const;

  Tensor score(Tape& tape, const TokenSequence& q, const TokenSequence& p) const;
  double score_raw(const TokenSequence& q, const TokenSequence& p) const;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  CrossEncoder clone() const;

 private:
  CrossEncoder() = default;
  EncoderConfig cfg_;
  Tower joint_tower_;
  Tensor projection_;  // [d]

  friend CrossEncoder load_cross_encoder(const std::string& path);
};

// FNV-1a over the little-endian parameter bytes; used by tests and the
// pipeline to assert teacher/frozen-copy immutability.
std::uint64_t parameter_checksum(const std::vector<Tensor>& params);

}  // namespace prod

#endif  // PROD_ENCODER_HPP_
