#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrp/layers.hpp"

namespace mrp {

// Binary tensor container:
//   "MRPC" | u32 LE version | u64 LE header length | JSON header | f32 LE payloads
// The header lists {name, shape, dtype, offset} records in payload order plus
// an optional free-form "meta" object.
inline constexpr char kCheckpointMagic[4] = {'M', 'R', 'P', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Array value;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const Array* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.value;
    return nullptr;
  }
  const Array& at(const std::string& name) const {
    const Array* a = find(name);
    if (!(a != nullptr)) fail(ErrorKind::missing_artifact, "checkpoint has no tensor '" + name + "'");
    return *a;
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  require(pos + sizeof(T) <= in.size(), ErrorKind::io, "truncated checkpoint");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

// Values narrowed to f32 and widened back: exactly what a save/load cycle yields.
inline double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void round_to_f32(Array& a) {
  for (double& v : a.span()) v = round_to_f32(v);
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::json header;
  header["meta"] = ck.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape()}, {"dtype", "f32"}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.value.numel()) * sizeof(float);
  }
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& t : ck.tensors)
    for (double v : t.value.span()) detail::put_le<float>(out, static_cast<float>(v));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0, ErrorKind::io,
          "not an MRPC checkpoint");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (!(version == kCheckpointVersion)) fail(ErrorKind::io, "unsupported checkpoint version " + std::to_string(version));
  const auto header_len = detail::get_le<std::uint64_t>(bytes, pos);
  require(pos + header_len <= bytes.size(), ErrorKind::io, "truncated checkpoint header");
  const auto header = nlohmann::json::parse(bytes.substr(pos, header_len));
  pos += header_len;
  const std::size_t payload = pos;

  Checkpoint ck;
  if (header.contains("meta")) ck.meta = header["meta"];
  for (const auto& rec : header.at("tensors")) {
    if (!(rec.at("dtype") == "f32")) fail(ErrorKind::io, "unsupported dtype " + rec.at("dtype").dump());
    Shape shape = rec.at("shape").get<Shape>();
    std::size_t at = payload + rec.at("offset").get<std::size_t>();
    Array a(shape);
    for (double& v : a.span()) v = static_cast<double>(detail::get_le<float>(bytes, at));
    ck.tensors.push_back({rec.at("name").get<std::string>(), std::move(a)});
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!(static_cast<bool>(out))) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  const std::string bytes = encode_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!(static_cast<bool>(out))) fail(ErrorKind::io, "write failed for '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!(static_cast<bool>(in))) fail(ErrorKind::missing_artifact, "'" + path + "' not found");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

inline void append_tensors(Checkpoint& ck, const NamedTensors& named, const std::string& prefix = "") {
  for (const auto& [name, t] : named) ck.tensors.push_back({prefix + name, t.value()});
}

// Copies checkpoint values into existing tensors, checking shapes.
inline void assign_tensors(const Checkpoint& ck, const NamedTensors& named, const std::string& prefix = "") {
  for (auto [name, t] : named) {
    const Array& src = ck.at(prefix + name);
    if (!(src.same_shape(t.value()))) fail(ErrorKind::invalid_shape,
            "tensor '" + prefix + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                shape_str(t.value().shape()));
    t.mutable_value() = src;
  }
}

// 64-bit FNV-1a, used to tag reports with the artifacts that produced them.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline std::string file_hash(const std::string& path) { return hex64(fnv1a(read_file(path))); }

}  // namespace mrp
