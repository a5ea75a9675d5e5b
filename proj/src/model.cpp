#include "i3d/model.hpp"

#include <sstream>

#include "i3d/config.hpp"
#include "i3d/error.hpp"

namespace i3d {

std::string to_string(Streams streams) {
  switch (streams) {
    case Streams::kRgb: return "rgb";
    case Streams::kFlow: return "flow";
    case Streams::kBoth: return "both";
  }
  return "both";
}

Streams parse_streams(const std::string& name) {
  if (name == "rgb") return Streams::kRgb;
  if (name == "flow") return Streams::kFlow;
  if (name == "both") return Streams::kBoth;
  throw ConfigError("unknown streams '" + name + "' (expected rgb, flow or both)");
}

std::string model_tag(const ModelSpec& spec) {
  const ArchConfig& a = spec.arch;
  std::ostringstream os;
  os.precision(17);
  os << "family=" << to_string(a.family) << ",classes=" << a.num_classes
     << ",width=" << a.width_multiplier << ",frames=" << a.frames << ",height=" << a.height
     << ",width_px=" << a.width << ",channels=" << a.channels << ",flow_frames=" << a.flow_frames
     << ",fps=" << a.fps << ",streams=" << to_string(a.streams)
     << ",toy=" << (a.toy_geometry ? 1 : 0);
  if (spec.inflated) {
    os << ",inflate=1";
    std::istringstream rule(spec.rule.to_text());
    std::string line;
    while (std::getline(rule, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(' ');
        const auto e = s.find_last_not_of(' ');
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      os << ",rule." << trim(line.substr(0, eq)) << "=" << trim(line.substr(eq + 1));
    }
  }
  return os.str();
}

ModelSpec parse_model_tag(const std::string& tag) {
  ModelSpec spec;
  std::string rule_text;
  bool have_family = false;
  std::istringstream is(tag);
  std::string item;
  while (std::getline(is, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("model tag: malformed entry '" + item + "' in '" + tag + "'");
    }
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    ArchConfig& a = spec.arch;
    if (key == "family") {
      a.family = parse_family(value);
      have_family = true;
    } else if (key == "classes") {
      a.num_classes = parse_int(key, value);
    } else if (key == "width") {
      a.width_multiplier = parse_double(key, value);
    } else if (key == "frames") {
      a.frames = parse_int(key, value);
    } else if (key == "height") {
      a.height = parse_int(key, value);
    } else if (key == "width_px") {
      a.width = parse_int(key, value);
    } else if (key == "channels") {
      a.channels = parse_int(key, value);
    } else if (key == "flow_frames") {
      a.flow_frames = parse_int(key, value);
    } else if (key == "fps") {
      a.fps = parse_double(key, value);
    } else if (key == "streams") {
      a.streams = parse_streams(value);
    } else if (key == "toy") {
      a.toy_geometry = parse_bool(key, value);
    } else if (key == "inflate") {
      spec.inflated = parse_bool(key, value);
    } else if (key.rfind("rule.", 0) == 0) {
      rule_text += key.substr(5) + " = " + value + "\n";
    } else {
      throw ConfigError("model tag: unknown key '" + key + "'");
    }
  }
  if (!have_family) throw ConfigError("model tag '" + tag + "' has no family");
  if (spec.inflated) spec.rule = InflationRule::parse(rule_text);
  return spec;
}

GraphSpec build_model(const ModelSpec& spec) {
  GraphSpec g = build_graph(spec.arch);
  return spec.inflated ? inflate_topology(g, spec.rule) : g;
}

}  // namespace i3d
