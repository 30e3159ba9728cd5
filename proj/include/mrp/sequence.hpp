#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mrp/error.hpp"

namespace mrp {

// Fixed special ids shared by every vocabulary.
inline constexpr int kMask = 0;
inline constexpr int kPad = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;

// Block index of a position. A non-empty prompt is one leading block; the
// response region is cut into blocks of `block_size` after it.
inline int block_index(std::int64_t pos, std::int64_t prompt_len, std::int64_t block_size) {
  if (prompt_len > 0) return pos < prompt_len ? 0 : 1 + static_cast<int>((pos - prompt_len) / block_size);
  return static_cast<int>(pos / block_size);
}

// A partially masked sequence: the state of the denoising chain.
struct SequenceState {
  std::vector<int> ids;
  std::vector<char> masked;
  std::int64_t prompt_len = 0;
  std::int64_t block_size = 1;
  int current_block = 0;

  std::int64_t length() const { return static_cast<std::int64_t>(ids.size()); }
  int block_of(std::int64_t pos) const { return block_index(pos, prompt_len, block_size); }
  int first_response_block() const { return prompt_len > 0 ? 1 : 0; }
  int num_blocks() const { return length() == 0 ? 0 : block_of(length() - 1) + 1; }

  // [begin, end) positions of block b.
  std::pair<std::int64_t, std::int64_t> block_range(int b) const {
    if (prompt_len > 0 && b == 0) return {0, prompt_len};
    const std::int64_t start = prompt_len + static_cast<std::int64_t>(b - first_response_block()) * block_size;
    return {start, std::min(start + block_size, length())};
  }

  std::int64_t masked_count() const {
    std::int64_t n = 0;
    for (char m : masked) n += m ? 1 : 0;
    return n;
  }
  std::int64_t masked_in_block(int b) const {
    auto [lo, hi] = block_range(b);
    std::int64_t n = 0;
    for (auto i = lo; i < hi; ++i) n += masked[i] ? 1 : 0;
    return n;
  }
  bool finished() const { return current_block >= num_blocks(); }

  friend bool operator==(const SequenceState&, const SequenceState&) = default;
};

inline void check_state(const SequenceState& x) {
  require(x.ids.size() == x.masked.size(), ErrorKind::contract_violation, "ids/masked length mismatch");
  require(x.block_size >= 1, ErrorKind::invalid_config, "block size must be positive");
  require((x.length() - x.prompt_len) % x.block_size == 0, ErrorKind::invalid_config,
          "response region is not a whole number of blocks");
  for (std::int64_t i = 0; i < x.length(); ++i) {
    if (!((x.masked[i] != 0) == (x.ids[i] == kMask))) fail(ErrorKind::contract_violation,
            "mask flag disagrees with id at position " + std::to_string(i));
    require(!(i < x.prompt_len && x.masked[i]), ErrorKind::contract_violation, "prompt position masked");
  }
}

// Fresh decoding state: prompt ids followed by `response_len` masked positions.
inline SequenceState make_decode_state(const std::vector<int>& prompt_ids, std::int64_t response_len,
                                       std::int64_t block_size) {
  require(block_size >= 1 && response_len % block_size == 0, ErrorKind::invalid_config,
          "response length must be a multiple of the block size");
  SequenceState x;
  x.prompt_len = static_cast<std::int64_t>(prompt_ids.size());
  x.block_size = block_size;
  x.ids = prompt_ids;
  x.ids.resize(prompt_ids.size() + static_cast<std::size_t>(response_len), kMask);
  x.masked.assign(x.ids.size(), 0);
  for (std::size_t i = prompt_ids.size(); i < x.ids.size(); ++i) x.masked[i] = 1;
  x.current_block = x.first_response_block();
  return x;
}

}  // namespace mrp
