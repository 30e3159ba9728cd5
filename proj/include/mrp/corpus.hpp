#pragma once

#include <array>
#include <span>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mrp/random.hpp"
#include "mrp/sequence.hpp"

namespace mrp {

// Character vocabulary: four specials, digits, operators, space and a-z.
class Vocab {
 public:
  Vocab() {
    symbols_ = {"<mask>", "<pad>", "<bos>", "<eos>"};
    for (char c = '0'; c <= '9'; ++c) symbols_.emplace_back(1, c);
    for (char c : std::string_view("+-= ")) symbols_.emplace_back(1, c);
    for (char c = 'a'; c <= 'z'; ++c) symbols_.emplace_back(1, c);
    char_to_id_.fill(-1);
    for (std::size_t i = 4; i < symbols_.size(); ++i)
      char_to_id_[static_cast<unsigned char>(symbols_[i][0])] = static_cast<int>(i);
  }

  int size() const { return static_cast<int>(symbols_.size()); }
  bool is_special(int id) const { return id >= 0 && id < 4; }
  const std::string& symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }

  std::vector<int> tokenize(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
      const int id = char_to_id_[static_cast<unsigned char>(text[i])];
      if (id < 0)
        fail(ErrorKind::unknown_symbol,
             "character '" + std::string(1, text[i]) + "' at offset " + std::to_string(i) + " is not in the vocabulary");
      ids.push_back(id);
    }
    return ids;
  }

  // Special ids render as nothing.
  std::string detokenize(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
      if (!(id >= 0 && id < size())) fail(ErrorKind::unknown_symbol, "token id " + std::to_string(id) + " out of range");
      if (!is_special(id)) out += symbols_[static_cast<std::size_t>(id)];
    }
    return out;
  }

 private:
  std::vector<std::string> symbols_;
  std::array<int, 256> char_to_id_{};
};

inline const Vocab& vocab() {
  static const Vocab v;
  return v;
}

// Fixed grid every example of a task is laid out on.
struct Layout {
  std::int64_t prompt_len = 8;
  std::int64_t response_len = 8;
  std::int64_t block_size = 8;

  std::int64_t length() const { return prompt_len + response_len; }
  friend bool operator==(const Layout&, const Layout&) = default;
};

inline std::int64_t round_up(std::int64_t n, std::int64_t m) { return (n + m - 1) / m * m; }

inline int digit_count(std::int64_t v) {
  int n = 1;
  while (v >= 10) {
    v /= 10;
    ++n;
  }
  return n;
}

// Smallest layout that fits "a+b=" prompts and sums of operands up to max_operand.
inline Layout layout_for(std::int64_t max_operand, std::int64_t block_size) {
  const std::int64_t prompt = 1 + 2 * digit_count(max_operand) + 2;   // BOS a op b =
  const std::int64_t response = digit_count(2 * max_operand) + 1;     // digits EOS
  return {round_up(prompt, block_size), round_up(response, block_size), block_size};
}

struct Example {
  std::string prompt_text;
  std::string answer_text;
  std::vector<int> prompt_ids;    // BOS + prompt, PAD-filled to the layout
  std::vector<int> response_ids;  // answer + EOS, PAD-filled to the layout

  std::vector<int> full_ids() const {
    std::vector<int> ids = prompt_ids;
    ids.insert(ids.end(), response_ids.begin(), response_ids.end());
    return ids;
  }

  SequenceState clean_state(std::int64_t block_size) const {
    SequenceState x;
    x.ids = full_ids();
    x.masked.assign(x.ids.size(), 0);
    x.prompt_len = static_cast<std::int64_t>(prompt_ids.size());
    x.block_size = block_size;
    x.current_block = x.num_blocks();
    return x;
  }
};

inline Example make_example(std::string prompt_text, std::string answer_text, const Layout& layout) {
  Example ex;
  ex.prompt_ids = {kBos};
  for (int id : vocab().tokenize(prompt_text)) ex.prompt_ids.push_back(id);
  ex.response_ids = vocab().tokenize(answer_text);
  ex.response_ids.push_back(kEos);
  if (!(static_cast<std::int64_t>(ex.prompt_ids.size()) <= layout.prompt_len)) fail(ErrorKind::invalid_config,
          "prompt '" + prompt_text + "' does not fit the layout");
  if (!(static_cast<std::int64_t>(ex.response_ids.size()) <= layout.response_len)) fail(ErrorKind::invalid_config,
          "answer '" + answer_text + "' does not fit the layout");
  require(layout.response_len % layout.block_size == 0, ErrorKind::invalid_config, "response region off the block grid");
  ex.prompt_ids.resize(static_cast<std::size_t>(layout.prompt_len), kPad);
  ex.response_ids.resize(static_cast<std::size_t>(layout.response_len), kPad);
  ex.prompt_text = std::move(prompt_text);
  ex.answer_text = std::move(answer_text);
  return ex;
}

inline Example make_arithmetic(std::int64_t a, std::int64_t b, char op, const Layout& layout) {
  if (!(op == '+' || op == '-')) fail(ErrorKind::invalid_config, std::string("unsupported operator ") + op);
  const std::int64_t result = op == '+' ? a + b : a - b;
  require(result >= 0, ErrorKind::invalid_config, "negative result");
  return make_example(std::to_string(a) + op + std::to_string(b) + "=", std::to_string(result), layout);
}

struct GenOptions {
  std::int64_t max_operand = 99;
  std::int64_t min_operand = 0;
  std::string ops = "+-";
  std::int64_t block_size = 8;
};

// Uniform operands and operator; subtraction operands are ordered so the
// result is non-negative.
inline std::vector<Example> gen_arithmetic(std::uint64_t seed, std::int64_t count, const GenOptions& opt) {
  require(opt.max_operand <= 999 && opt.min_operand >= 0 && opt.min_operand <= opt.max_operand,
          ErrorKind::invalid_config, "operand range must lie within [0, 999]");
  require(!opt.ops.empty(), ErrorKind::invalid_config, "no operators");
  const Layout layout = layout_for(opt.max_operand, opt.block_size);
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(std::max<std::int64_t>(count, 0)));
  for (std::int64_t i = 0; i < count; ++i) {
    std::int64_t a = uniform_int(rng, opt.min_operand, opt.max_operand);
    std::int64_t b = uniform_int(rng, opt.min_operand, opt.max_operand);
    const char op = opt.ops[uniform_index(rng, opt.ops.size())];
    if (op == '-' && a < b) std::swap(a, b);
    out.push_back(make_arithmetic(a, b, op, layout));
  }
  return out;
}

inline std::vector<Example> gen_arithmetic(std::uint64_t seed, std::int64_t count, std::int64_t max_operand) {
  GenOptions opt;
  opt.max_operand = max_operand;
  return gen_arithmetic(seed, count, opt);
}

// Like gen_arithmetic but every prompt is distinct; for evaluation sets.
inline std::vector<Example> gen_distinct(std::uint64_t seed, std::int64_t count, const GenOptions& opt) {
  const std::int64_t span = opt.max_operand - opt.min_operand + 1;
  if (!(count <= span * span * static_cast<std::int64_t>(opt.ops.size())))
    fail(ErrorKind::invalid_config, "cannot draw " + std::to_string(count) + " distinct prompts from this range");
  std::set<std::string> seen;
  std::vector<Example> out;
  for (std::uint64_t round = 0; static_cast<std::int64_t>(out.size()) < count; ++round)
    for (auto& ex : gen_arithmetic(mix_seed(seed, round), count, opt)) {
      if (static_cast<std::int64_t>(out.size()) == count) break;
      if (seen.insert(ex.prompt_text).second) out.push_back(std::move(ex));
    }
  return out;
}

// Drops every example whose prompt appears in `held_out`.
inline std::vector<Example> exclude_prompts(std::vector<Example> examples, std::span<const Example> held_out) {
  std::set<std::string> banned;
  for (const auto& ex : held_out) banned.insert(ex.prompt_text);
  std::erase_if(examples, [&](const Example& ex) { return banned.count(ex.prompt_text) > 0; });
  return examples;
}

// `count` examples none of whose prompts occur in `held_out`.
inline std::vector<Example> gen_excluding(std::uint64_t seed, std::int64_t count, const GenOptions& opt,
                                          std::span<const Example> held_out) {
  std::vector<Example> out;
  for (std::uint64_t round = 0; static_cast<std::int64_t>(out.size()) < count; ++round) {
    if (!(round < 64)) fail(ErrorKind::invalid_config, "held-out set leaves too few training prompts");
    auto more = exclude_prompts(gen_arithmetic(round == 0 ? seed : mix_seed(seed, round), count, opt), held_out);
    for (auto& ex : more) {
      if (static_cast<std::int64_t>(out.size()) == count) break;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

// Response text of a decoded sequence: everything before the first EOS.
inline std::string response_text(const SequenceState& x) {
  std::vector<int> resp;
  for (std::int64_t i = x.prompt_len; i < x.length(); ++i) {
    if (x.ids[i] == kEos) break;
    resp.push_back(x.ids[i]);
  }
  return vocab().detokenize(resp);
}

inline double exact_match_accuracy(std::span<const SequenceState> decoded, std::span<const Example> refs) {
  require(decoded.size() == refs.size(), ErrorKind::invalid_shape, "decoded/reference count mismatch");
  if (decoded.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < decoded.size(); ++i) hits += response_text(decoded[i]) == refs[i].answer_text ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(decoded.size());
}

// Dataset file: one "prompt<TAB>answer" line per example.
inline void write_dataset(const std::string& path, std::span<const Example> examples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!(static_cast<bool>(out))) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  for (const auto& ex : examples) out << ex.prompt_text << '\t' << ex.answer_text << '\n';
  if (!(static_cast<bool>(out))) fail(ErrorKind::io, "write failed for '" + path + "'");
}

inline std::vector<Example> read_dataset(const std::string& path, const Layout& layout) {
  std::ifstream in(path, std::ios::binary);
  if (!(static_cast<bool>(in))) fail(ErrorKind::missing_artifact, "dataset '" + path + "' not found");
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (!(tab != std::string::npos)) fail(ErrorKind::io, path + ":" + std::to_string(lineno) + ": missing TAB separator");
    out.push_back(make_example(line.substr(0, tab), line.substr(tab + 1), layout));
  }
  return out;
}

}  // namespace mrp
