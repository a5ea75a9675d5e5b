#include "i3d/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "i3d/error.hpp"
#include "i3d/graph.hpp"

namespace i3d {

const Tensor& Checkpoint::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing weight tensor '" + name + "'");
  return entries_[it->second].second;
}

Tensor& Checkpoint::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing weight tensor '" + name + "'");
  return entries_[it->second].second;
}

namespace {
void check_name(const std::string& name) {
  if (name.empty() || std::any_of(name.begin(), name.end(),
                                  [](unsigned char c) { return c <= ' ' || c == 0x7f; })) {
    throw ConfigError("tensor name '" + name + "' must be non-empty without whitespace");
  }
}
}  // namespace

void Checkpoint::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second].second = std::move(value);
    return;
  }
  check_name(name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
}

void Checkpoint::add(const std::string& name, Tensor value) {
  if (contains(name)) {
    throw FormatError(FormatError::Code::kDuplicateName, "duplicate tensor name '" + name + "'");
  }
  set(name, std::move(value));
}

void Checkpoint::erase(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) return;
  entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(it->second));
  index_.clear();
  for (size_t i = 0; i < entries_.size(); ++i) index_[entries_[i].first] = i;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'I', 'N', 'F', 'L'};
constexpr size_t kPrelude = 4 + 4 + 8;

template <typename T>
void put_le(std::string& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, size_t pos) {
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

void append_f32(std::string& out, std::span<const float> values) {
  const size_t start = out.size();
  out.resize(start + values.size() * 4);
  std::memcpy(out.data() + start, values.data(), values.size() * 4);
  if constexpr (std::endian::native == std::endian::big) {
    for (size_t i = start; i < out.size(); i += 4) std::reverse(out.begin() + i, out.begin() + i + 4);
  }
}

void read_f32(const char* src, std::span<float> values) {
  std::memcpy(values.data(), src, values.size() * 4);
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(values.data());
    for (size_t i = 0; i < values.size() * 4; i += 4) std::reverse(bytes + i, bytes + i + 4);
  }
}

std::string shape_token(const Shape& s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

FormatError bad_header(const std::string& what) {
  return FormatError(FormatError::Code::kBadHeader, "checkpoint header: " + what);
}

Shape parse_shape(const std::string& token) {
  Shape s;
  if (token.empty() || token.back() == 'x') throw bad_header("bad shape '" + token + "'");
  std::stringstream ss(token);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos ||
        part.size() > 12) {
      throw bad_header("bad shape '" + token + "'");
    }
    s.push_back(std::stoll(part));
  }
  if (s.empty() || s.size() > 5) throw bad_header("bad shape '" + token + "'");
  return s;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.family.find_first_of(" \t\r\n") != std::string::npos) {
    throw ConfigError("checkpoint family tag must not contain whitespace");
  }
  std::ostringstream header;
  header << "family " << (ckpt.family.empty() ? "-" : ckpt.family) << '\n';
  header << "records " << ckpt.size() << '\n';
  uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.entries()) {
    const uint64_t length = static_cast<uint64_t>(t.numel()) * 4;
    header << name << ' ' << shape_token(t.shape()) << ' ' << offset << ' ' << length << '\n';
    offset += length;
  }
  const std::string text = header.str();
  std::string out(kMagic, 4);
  put_le<uint32_t>(out, Checkpoint::kVersion);
  put_le<uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& e : ckpt.entries()) append_f32(out, e.second.data());
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  using Code = FormatError::Code;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(Code::kBadMagic, "not a checkpoint: missing INFL magic");
  }
  if (bytes.size() < kPrelude) throw FormatError(Code::kTruncated, "checkpoint prelude truncated");
  const uint32_t version = get_le<uint32_t>(bytes, 4);
  if (version != Checkpoint::kVersion) {
    throw FormatError(Code::kBadVersion, "unsupported checkpoint version " + std::to_string(version));
  }
  const uint64_t header_len = get_le<uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPrelude) {
    throw FormatError(Code::kTruncated, "checkpoint header truncated");
  }
  const std::string header = bytes.substr(kPrelude, header_len);
  const size_t payload_start = kPrelude + header_len;
  const uint64_t payload_size = bytes.size() - payload_start;

  std::istringstream in(header);
  std::string line, key;
  Checkpoint ckpt;
  if (!std::getline(in, line)) throw bad_header("empty");
  {
    std::istringstream ls(line);
    std::string family, extra;
    if (!(ls >> key >> family) || key != "family" || (ls >> extra)) {
      throw bad_header("expected 'family <tag>'");
    }
    ckpt.family = family == "-" ? "" : family;
  }
  uint64_t count = 0;
  if (!std::getline(in, line)) throw bad_header("missing record count");
  {
    std::istringstream ls(line);
    std::string extra;
    if (!(ls >> key >> count) || key != "records" || (ls >> extra)) {
      throw bad_header("expected 'records <count>'");
    }
  }

  struct Record {
    std::string name;
    Shape shape;
    uint64_t offset, length;
  };
  std::vector<Record> records;
  for (uint64_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw bad_header("expected " + std::to_string(count) + " records");
    std::istringstream ls(line);
    Record r;
    std::string shape, extra;
    if (!(ls >> r.name >> shape >> r.offset >> r.length) || (ls >> extra)) {
      throw bad_header("malformed record line '" + line + "'");
    }
    r.shape = parse_shape(shape);
    if (r.length != static_cast<uint64_t>(shape_numel(r.shape)) * 4) {
      throw FormatError(Code::kCorrupt, "record '" + r.name + "' length " +
                                            std::to_string(r.length) + " does not match shape " +
                                            shape_to_string(r.shape));
    }
    if (r.offset > payload_size || r.length > payload_size - r.offset) {
      throw FormatError(Code::kTruncated, "payload of '" + r.name + "' runs past end of file");
    }
    records.push_back(std::move(r));
  }
  if (std::getline(in, line) && !line.empty()) throw bad_header("trailing text after records");

  std::vector<const Record*> by_offset;
  for (const Record& r : records) by_offset.push_back(&r);
  std::sort(by_offset.begin(), by_offset.end(),
            [](const Record* a, const Record* b) { return a->offset < b->offset; });
  for (size_t i = 1; i < by_offset.size(); ++i) {
    const Record& prev = *by_offset[i - 1];
    if (prev.length > 0 && prev.offset + prev.length > by_offset[i]->offset) {
      throw FormatError(Code::kOverlap, "records '" + prev.name + "' and '" + by_offset[i]->name +
                                            "' overlap");
    }
  }
  for (const Record& r : records) {
    Tensor t(r.shape);
    read_f32(bytes.data() + payload_start + r.offset, t.data());
    ckpt.add(r.name, std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

// ---------------------------------------------------------------------------

namespace {

std::string canonical_name(const std::string& name) {
  static const std::regex token("(^|_)[23]d(?=_|$)");
  std::string out;
  std::stringstream ss(name);
  std::string part;
  bool first = true;
  while (std::getline(ss, part, '/')) {
    std::string c = std::regex_replace(part, token, "");
    if (!c.empty() && c.front() == '_') c.erase(0, 1);
    if (c.empty()) continue;
    if (!first) out += '/';
    out += c;
    first = false;
  }
  return out;
}

}  // namespace

NameRemap remap_2d_to_3d_names(const Checkpoint& ckpt2d, const GraphSpec& graph3d) {
  std::map<std::string, std::vector<std::string>> by_canon;
  for (const auto& e : ckpt2d.entries()) by_canon[canonical_name(e.first)].push_back(e.first);

  NameRemap result;
  result.mapped.family = graph3d.family;
  std::vector<bool> used(ckpt2d.size(), false);
  std::unordered_map<std::string, size_t> position;
  for (size_t i = 0; i < ckpt2d.size(); ++i) position[ckpt2d.entries()[i].first] = i;

  for (const ParamSpec& p : graph3d.params()) {
    const std::string canon = canonical_name(p.name);
    auto it = by_canon.find(canon);
    if (it == by_canon.end()) {
      const std::string layer = p.name.substr(0, p.name.rfind('/'));
      throw ConfigError("no 2D weights for layer '" + layer + "' (tensor '" + p.name + "')");
    }
    if (it->second.size() > 1) {
      std::string list;
      for (const auto& c : it->second) list += (list.empty() ? "" : ", ") + c;
      throw ConfigError("ambiguous 2D source for '" + p.name + "': " + list);
    }
    const std::string& src = it->second.front();
    used[position[src]] = true;
    result.mapped.add(p.name, ckpt2d.get(src));
  }
  for (size_t i = 0; i < ckpt2d.size(); ++i) {
    if (!used[i]) result.unmapped.push_back(ckpt2d.entries()[i].first);
  }
  return result;
}

}  // namespace i3d
