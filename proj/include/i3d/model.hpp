#pragma once

#include <string>

#include "i3d/graph.hpp"
#include "i3d/inflate.hpp"

namespace i3d {

// Everything needed to rebuild a graph: an architecture, optionally inflated
// with a rule. Stored as a checkpoint's family tag so files are
// self-describing.
struct ModelSpec {
  ArchConfig arch;
  bool inflated = false;
  InflationRule rule;
};

// Comma-separated key=value list without whitespace, e.g.
// "family=i3d,classes=400,width=1,frames=64,...[,inflate=1,rule.extent=0,...]".
std::string model_tag(const ModelSpec& spec);
// Raises ConfigError on unknown keys or malformed values.
ModelSpec parse_model_tag(const std::string& tag);

GraphSpec build_model(const ModelSpec& spec);

std::string to_string(Streams streams);
Streams parse_streams(const std::string& name);

}  // namespace i3d
