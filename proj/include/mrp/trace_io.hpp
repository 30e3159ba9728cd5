#pragma once

#include <string>

#include "mrp/checkpoint.hpp"
#include "mrp/corpus.hpp"
#include "mrp/diffusion.hpp"

namespace mrp {

// A DecodeTrace in the checkpoint container: step records live in the JSON
// meta, their h and logits as tensors "steps.<i>.hidden" / "steps.<i>.logits".
// Tensors are stored as f32.
inline Checkpoint encode_trace(const DecodeTrace& trace) {
  using nlohmann::json;
  Checkpoint ck;
  json steps = json::array();
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& s = trace.steps[i];
    json drafts = json::array();
    for (const auto& d : s.drafts)
      drafts.push_back({{"position", d.position}, {"token", d.token}, {"mrp_step", d.mrp_step},
                        {"confidence", d.confidence}});
    std::vector<int> masked(s.input.masked.begin(), s.input.masked.end());
    steps.push_back({{"kind", s.kind == StepKind::backbone ? "backbone" : "mrp"},
                     {"verification", s.verification},
                     {"ids", s.input.ids},
                     {"masked", masked},
                     {"prompt_len", s.input.prompt_len},
                     {"block_size", s.input.block_size},
                     {"current_block", s.input.current_block},
                     {"revealed", s.revealed},
                     {"revealed_tokens", s.revealed_tokens},
                     {"drafts", drafts},
                     {"accepted", s.accepted},
                     {"rejected", s.rejected},
                     {"has_tensors", !s.logits.values().empty()}});
    if (!s.logits.values().empty()) {
      ck.tensors.push_back({"steps." + std::to_string(i) + ".hidden", s.hidden});
      ck.tensors.push_back({"steps." + std::to_string(i) + ".logits", s.logits});
    }
  }
  ck.meta["kind"] = "decode_trace";
  ck.meta["steps"] = std::move(steps);
  return ck;
}

inline DecodeTrace decode_trace(const Checkpoint& ck) {
  require(ck.meta.value("kind", "") == "decode_trace", ErrorKind::io, "container does not hold a decode trace");
  DecodeTrace trace;
  const auto& steps = ck.meta.at("steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& j = steps[i];
    StepRecord s;
    s.kind = j.at("kind") == "backbone" ? StepKind::backbone : StepKind::mrp;
    s.verification = j.at("verification").get<bool>();
    s.input.ids = j.at("ids").get<std::vector<int>>();
    for (int m : j.at("masked").get<std::vector<int>>()) s.input.masked.push_back(static_cast<char>(m));
    s.input.prompt_len = j.at("prompt_len").get<std::int64_t>();
    s.input.block_size = j.at("block_size").get<std::int64_t>();
    s.input.current_block = j.at("current_block").get<int>();
    s.revealed = j.at("revealed").get<std::vector<std::int64_t>>();
    s.revealed_tokens = j.at("revealed_tokens").get<std::vector<int>>();
    for (const auto& d : j.at("drafts"))
      s.drafts.push_back({d.at("position").get<std::int64_t>(), d.at("token").get<int>(), d.at("mrp_step").get<int>(),
                          d.at("confidence").get<double>()});
    s.accepted = j.at("accepted").get<std::vector<std::int64_t>>();
    s.rejected = j.at("rejected").get<std::vector<std::int64_t>>();
    if (j.at("has_tensors").get<bool>()) {
      s.hidden = ck.at("steps." + std::to_string(i) + ".hidden");
      s.logits = ck.at("steps." + std::to_string(i) + ".logits");
    }
    trace.steps.push_back(std::move(s));
  }
  return trace;
}

inline void save_trace(const std::string& path, const DecodeTrace& trace) { save_checkpoint(path, encode_trace(trace)); }
inline DecodeTrace load_trace(const std::string& path) { return decode_trace(load_checkpoint(path)); }

// One line per step for the verbose log.
inline std::string describe_step(const StepRecord& s, std::size_t index) {
  std::string line = "step " + std::to_string(index) + " " + (s.kind == StepKind::backbone ? "backbone" : "mrp");
  if (s.verification) line += " (verify)";
  line += " block " + std::to_string(s.input.current_block) + " masked " + std::to_string(s.input.masked_count());
  auto list = [](const auto& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return "[" + out + "]";
  };
  if (!s.revealed.empty()) {
    std::string toks;
    for (std::size_t i = 0; i < s.revealed.size(); ++i)
      toks += (i ? " " : "") + std::to_string(s.revealed[i]) + "=" + vocab().symbol(s.revealed_tokens[i]);
    line += " reveal {" + toks + "}";
  }
  if (!s.drafts.empty()) {
    std::string d;
    for (std::size_t i = 0; i < s.drafts.size(); ++i)
      d += (i ? " " : "") + std::to_string(s.drafts[i].position) + "=" + vocab().symbol(s.drafts[i].token);
    line += " drafts {" + d + "}";
  }
  if (s.verification) line += " accepted " + list(s.accepted) + " rejected " + list(s.rejected);
  return line;
}

}  // namespace mrp
