#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "i3d/tensor.hpp"

namespace i3d {

class GraphSpec;

// Ordered name -> tensor store. Insertion order is preserved through save and
// load so files are byte-stable.
class Checkpoint {
 public:
  static constexpr uint32_t kVersion = 1;

  std::string family;

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Throws ConfigError naming the tensor when absent.
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  // Inserts, or replaces in place keeping the original position.
  void set(const std::string& name, Tensor value);
  // Throws FormatError(kDuplicateName) when the name exists.
  void add(const std::string& name, Tensor value);
  void erase(const std::string& name);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::string> names() const;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.family == b.family && a.entries_ == b.entries_;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// Binary container:
//   "INFL" | u32 LE version | u64 LE header length | header | payloads
// The header is UTF-8 text: a `family <name>` line, a `records <count>` line,
// then one `<name> <d0>x<d1>... <offset> <length>` line per tensor. Offsets are
// byte positions relative to the first payload byte. Payloads are raw
// little-endian f32.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

struct NameRemap {
  Checkpoint mapped;
  std::vector<std::string> unmapped;  // 2D names with no counterpart in the 3D graph
};

// Maps 2D tensor names onto the parameter names of `graph3d`. Node ids are
// compared after stripping a `2d`/`3d` token from each path component, so
// `conv1_2d/weight` and `conv1/weight` meet. Raises ConfigError naming the
// missing 3D parameter when one has no source, and listing the candidates when
// several 2D names canonicalize to the same target.
NameRemap remap_2d_to_3d_names(const Checkpoint& ckpt2d, const GraphSpec& graph3d);

}  // namespace i3d
