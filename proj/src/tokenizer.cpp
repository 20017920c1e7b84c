#include "prod/tokenizer.hpp"

#include <cctype>
#include <string>

#include "prod/common.hpp"
#include "prod/rng.hpp"

namespace prod {

namespace {

bool is_token_char(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80;
}

}  // namespace

TokenSequence tokenize(std::string_view text, std::size_t max_len, std::size_t vocab_size) {
  if (max_len == 0) throw ParameterError("tokenize: max_len must be positive");
  if (vocab_size <= kNumReservedIds) {
    throw ParameterError("tokenize: vocab_size must exceed the reserved id count");
  }
  const std::uint64_t hash_range = vocab_size - kNumReservedIds;

  TokenSequence seq;
  std::string token;
  auto flush = [&]() {
    if (token.empty()) return;
    seq.original_length += 1;
    if (seq.ids.size() < max_len) {
      const std::uint32_t id =
          kNumReservedIds + static_cast<std::uint32_t>(fnv1a64(token) % hash_range);
      seq.ids.push_back(id);
    }
    token.clear();
  };

  for (unsigned char c : text) {
    if (is_token_char(c)) {
      token.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();

  if (seq.ids.empty()) {
    seq.ids.push_back(kPadId);
  }
  return seq;
}

}  // namespace prod
