#ifndef PROD_TOKENIZER_HPP_
#define PROD_TOKENIZER_HPP_

#include <cstdint>
#include <string_view>
#include <vector>

namespace prod {

// Reserved vocabulary slots. Hashed tokens occupy [kNumReservedIds, vocab).
inline constexpr std::uint32_t kPadId = 0;
inline constexpr std::uint32_t kSepId = 1;
inline constexpr std::uint32_t kNumReservedIds = 2;

struct TokenSequence {
  std::vector<std::uint32_t> ids;
  std::size_t original_length = 0;  // token count before truncation
};

// Lowercases, splits on non-alphanumeric runs (bytes >= 0x80 count as token
// characters), hashes each token with FNV-1a 64 into
// [kNumReservedIds, vocab_size), and truncates to max_len. Empty text maps
// to a single PAD id.
TokenSequence tokenize(std::string_view text, std::size_t max_len, std::size_t vocab_size);

}  // namespace prod

#endif  // PROD_TOKENIZER_HPP_
