#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>
#include <string>
#include <vector>

#include "i3d/checkpoint.hpp"
#include "i3d/error.hpp"
#include "i3d/flow.hpp"
#include "i3d/graph.hpp"
#include "i3d/inflate.hpp"
#include "i3d/model.hpp"
#include "i3d/network.hpp"
#include "i3d/parallel.hpp"
#include "i3d/trainer.hpp"
#include "i3d/video.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

namespace i3d {
namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

std::vector<Tensor> to_tensors(const std::vector<Array>& arrays) {
  std::vector<Tensor> out;
  for (const Array& a : arrays) out.push_back(to_tensor(a));
  return out;
}

py::dict field_dict(const ReceptiveField& rf) {
  return py::dict("extent"_a = rf.extent, "jump"_a = rf.jump, "start"_a = rf.start);
}

// Clips cross the boundary as (frames, label) pairs, frames (T, C, H, W).
std::vector<VideoClip> to_clips(const std::vector<std::pair<Array, int>>& items, double fps) {
  std::vector<VideoClip> clips;
  for (const auto& [frames, label] : items) {
    VideoClip c;
    c.frames = to_tensor(frames);
    c.fps = fps;
    c.label = label;
    c.validate();
    clips.push_back(std::move(c));
  }
  return clips;
}

KeyValues to_key_values(const py::dict& d) {
  KeyValues kv;
  for (const auto& [k, v] : d) kv.emplace_back(py::str(k), py::str(v));
  return kv;
}

py::list history_list(const std::vector<MetricRow>& rows) {
  py::list out;
  for (const MetricRow& r : rows) {
    out.append(py::dict("step"_a = r.step, "lr"_a = r.lr, "train_loss"_a = r.train_loss,
                        "val_loss"_a = r.val_loss, "val_acc"_a = r.val_acc));
  }
  return out;
}

void bind_errors(py::module_& m) {
  static py::exception<Error> base(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base);
  py::register_exception<NumericError>(m, "NumericError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<IoError>(m, "IoError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
}

void bind_graph(py::module_& m) {
  py::enum_<Family>(m, "Family")
      .value("lstm", Family::kLstm)
      .value("c3d", Family::kC3d)
      .value("two_stream", Family::kTwoStream)
      .value("fused_3d", Family::kFused3d)
      .value("i3d", Family::kI3d)
      .value("inception2d", Family::kInception2d);
  m.def("parse_family", &parse_family, "name"_a);

  py::class_<ArchConfig>(m, "ArchConfig")
      .def(py::init([](const std::string& family) {
             return ArchConfig::defaults(parse_family(family));
           }),
           "family"_a)
      .def_readwrite("num_classes", &ArchConfig::num_classes)
      .def_readwrite("width_multiplier", &ArchConfig::width_multiplier)
      .def_readwrite("frames", &ArchConfig::frames)
      .def_readwrite("height", &ArchConfig::height)
      .def_readwrite("width", &ArchConfig::width)
      .def_readwrite("channels", &ArchConfig::channels)
      .def_readwrite("flow_frames", &ArchConfig::flow_frames)
      .def_readwrite("fps", &ArchConfig::fps)
      .def_readwrite("toy_geometry", &ArchConfig::toy_geometry)
      .def_property(
          "streams", [](const ArchConfig& a) { return to_string(a.streams); },
          [](ArchConfig& a, const std::string& s) { a.streams = parse_streams(s); })
      .def_property_readonly("family", [](const ArchConfig& a) { return to_string(a.family); });

  py::class_<GraphSpec>(m, "Graph")
      .def_readonly("family", &GraphSpec::family)
      .def("__len__", &GraphSpec::size)
      .def("__contains__", &GraphSpec::contains)
      .def("layers", [](const GraphSpec& g) {
        std::vector<std::string> ids;
        for (const LayerNode& n : g.nodes()) ids.push_back(n.id);
        return ids;
      })
      .def("shape", [](const GraphSpec& g, const std::string& id) { return g.node(id).shape; },
           "layer"_a)
      .def("param_shapes", [](const GraphSpec& g) {
        std::vector<std::pair<std::string, Shape>> out;
        for (const ParamSpec& p : g.params()) out.emplace_back(p.name, p.shape);
        return out;
      })
      .def("count_params", &count_params)
      .def("summary", &graph_summary)
      .def("receptive_field", [](const GraphSpec& g, const std::string& id) {
        return field_dict(receptive_field(g, id));
      }, "layer"_a)
      .def("receptive_fields", [](const GraphSpec& g) {
        py::dict out;
        for (const auto& [id, rf] : receptive_fields(g)) out[py::str(id)] = field_dict(rf);
        return out;
      });

  m.def("build_graph", &build_graph, "config"_a);
  m.def("build_model", [](const std::string& tag) { return build_model(parse_model_tag(tag)); },
        "tag"_a, "Rebuilds a graph from a checkpoint family tag.");
  m.def("with_input_frames", &with_input_frames, "graph"_a, "frames"_a);
  m.def("temporal_footprint", &temporal_footprint, "frames"_a, "stride"_a = 1, "fps"_a = 25.0);
}

void bind_checkpoint(py::module_& m) {
  py::class_<Checkpoint>(m, "Checkpoint")
      .def(py::init<>())
      .def_readwrite("family", &Checkpoint::family)
      .def("__len__", &Checkpoint::size)
      .def("__contains__", &Checkpoint::contains)
      .def("__getitem__", [](const Checkpoint& c, const std::string& k) { return to_array(c.get(k)); })
      .def("__setitem__", [](Checkpoint& c, const std::string& k, const Array& a) {
        c.set(k, to_tensor(a));
      })
      .def("__delitem__", &Checkpoint::erase)
      .def("__eq__", [](const Checkpoint& a, const Checkpoint& b) { return a == b; })
      .def("names", &Checkpoint::names)
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(c, p); },
           "path"_a)
      .def_static("load", &load_checkpoint, "path"_a)
      .def("to_bytes", [](const Checkpoint& c) { return py::bytes(serialize_checkpoint(c)); })
      .def_static("from_bytes", [](const py::bytes& b) {
        return parse_checkpoint(std::string(b));
      });

  m.def("init_weights", &init_weights, "graph"_a, "seed"_a = 0);
  m.def("check_weights", &check_weights, "graph"_a, "weights"_a);
  m.def("forward", [](const GraphSpec& g, const Checkpoint& w, const std::vector<Array>& inputs,
                      bool train) {
    return to_array(forward(g, w, to_tensors(inputs), train ? Mode::kTrain : Mode::kInfer).output(g));
  }, "graph"_a, "weights"_a, "inputs"_a, "train"_a = false,
        "Runs the graph on (N, C, T, H, W) inputs and returns the output activation.");
  m.def("calibrate_batchnorm", [](const GraphSpec& g, Checkpoint& w,
                                  const std::vector<Array>& inputs) {
    calibrate_batchnorm(g, w, to_tensors(inputs));
  }, "graph"_a, "weights"_a, "inputs"_a);
}

void bind_inflate(py::module_& m) {
  py::class_<InflationRule>(m, "InflationRule")
      .def(py::init<>())
      .def_static("i3d", &InflationRule::i3d)
      .def_static("degenerate", &InflationRule::degenerate)
      .def_static("parse", &InflationRule::parse, "text"_a)
      .def("to_text", &InflationRule::to_text)
      .def_readwrite("uniform_extent", &InflationRule::uniform_extent)
      .def_readwrite("match_stride", &InflationRule::match_stride)
      .def_readwrite("unpooled_leading_maxpools", &InflationRule::unpooled_leading_maxpools)
      .def_readwrite("final_avgpool_extent", &InflationRule::final_avgpool_extent)
      .def_readwrite("frames", &InflationRule::frames)
      .def_readwrite("rescale", &InflationRule::rescale)
      .def_readwrite("extent_overrides", &InflationRule::extent_overrides)
      .def_readwrite("stride_overrides", &InflationRule::stride_overrides);

  m.def("inflate_kernel", [](const Array& k, int n, bool rescale) {
    return to_array(inflate_kernel(to_tensor(k), n, rescale));
  }, "kernel"_a, "extent"_a, "rescale"_a = true);
  m.def("inflate", [](const GraphSpec& g, const Checkpoint& w, const InflationRule& rule) {
    Inflated inf = inflate_graph(g, w, rule);
    return py::make_tuple(std::move(inf.graph), std::move(inf.weights));
  }, "graph"_a, "weights"_a, "rule"_a = InflationRule::i3d(),
        "Returns the inflated (graph, weights).");
  m.def("make_boring_video", [](const Array& image, int64_t frames) {
    return to_array(make_boring_video(to_tensor(image), frames));
  }, "image"_a, "frames"_a);
  m.def("required_frames", &required_frames, "graph"_a);
  m.def("verify_fixed_point", [](const GraphSpec& g2, const Checkpoint& w2, const GraphSpec& g3,
                                 const Checkpoint& w3, const Array& image, double tol,
                                 int64_t frames) {
    const FixedPointReport r = verify_fixed_point(g2, w2, g3, w3, to_tensor(image), tol, frames);
    py::list layers;
    for (const LayerDeviation& d : r.layers) {
      layers.append(py::dict("layer"_a = d.layer, "position"_a = d.position,
                             "max_deviation"_a = d.max_deviation, "scale"_a = d.scale,
                             "passed"_a = d.passed));
    }
    return py::dict("passed"_a = r.passed, "frames"_a = r.frames,
                    "max_logit_deviation"_a = r.max_logit_deviation, "layers"_a = layers,
                    "text"_a = r.to_text());
  }, "graph2d"_a, "weights2d"_a, "graph3d"_a, "weights3d"_a, "image"_a, "tolerance"_a = 1e-4,
        "frames"_a = 0);
  m.def("adapt_input_conv", [](const Array& k, int64_t c) {
    return to_array(adapt_input_conv(to_tensor(k), c));
  }, "kernel"_a, "in_channels"_a);
}

void bind_flow(py::module_& m) {
  py::class_<TVL1Params>(m, "TVL1Params")
      .def(py::init<>())
      .def_readwrite("lambda_", &TVL1Params::lambda)
      .def_readwrite("theta", &TVL1Params::theta)
      .def_readwrite("tau", &TVL1Params::tau)
      .def_readwrite("warps", &TVL1Params::warps)
      .def_readwrite("inner_iterations", &TVL1Params::inner_iterations)
      .def_readwrite("scale_factor", &TVL1Params::scale_factor)
      .def_readwrite("max_levels", &TVL1Params::max_levels)
      .def_readwrite("min_size", &TVL1Params::min_size)
      .def_readwrite("clamp", &TVL1Params::clamp);

  m.def("tvl1", [](const Array& a, const Array& b, const TVL1Params& p) {
    FlowField f;
    TVL1Log log;
    {
      py::gil_scoped_release release;
      f = tvl1(to_tensor(a), to_tensor(b), p, &log);
    }
    return py::make_tuple(to_array(f.u), to_array(f.v), log.finest_energy);
  }, "frame_a"_a, "frame_b"_a, "params"_a = TVL1Params{},
        "Returns (u, v, finest-level energies) for two (H, W) frames.");
  m.def("tvl1_energy", [](const Array& a, const Array& b, const Array& u, const Array& v,
                          double lambda) {
    return tvl1_energy(to_tensor(a), to_tensor(b), FlowField{to_tensor(u), to_tensor(v)}, lambda);
  }, "frame_a"_a, "frame_b"_a, "u"_a, "v"_a, "lambda_"_a = TVL1Params{}.lambda);
  m.def("flow_stack", [](const std::vector<Array>& frames, const TVL1Params& p) {
    return to_array(flow_stack(to_tensors(frames), p));
  }, "frames"_a, "params"_a = TVL1Params{});
  m.def("rgb_to_gray", [](const Array& rgb) { return to_array(rgb_to_gray(to_tensor(rgb))); },
        "rgb"_a);
  m.def("write_flo", [](const std::filesystem::path& p, const Array& u, const Array& v) {
    write_flo(FlowField{to_tensor(u), to_tensor(v)}, p);
  }, "path"_a, "u"_a, "v"_a);
  m.def("read_flo", [](const std::filesystem::path& p) {
    const FlowField f = read_flo(p);
    return py::make_tuple(to_array(f.u), to_array(f.v));
  }, "path"_a);
}

void bind_video(py::module_& m) {
  m.def("synthetic_clips", [](const std::string& task, int64_t n_per_class, int64_t frames,
                              int64_t height, int64_t width, int64_t channels, uint64_t seed) {
    py::list out;
    for (const VideoClip& c : gen_synthetic_temporal(parse_task(task), n_per_class,
                                                     {frames, height, width, channels}, seed)) {
      out.append(py::make_tuple(to_array(c.frames), c.label));
    }
    return out;
  }, "task"_a, "n_per_class"_a, "frames"_a = 16, "height"_a = 32, "width"_a = 32,
        "channels"_a = 3, "seed"_a = 0,
        "(frames, label) pairs with frames (T, C, H, W) in [0, 1].");
  m.def("shuffle_frames", [](const Array& frames, uint64_t seed) {
    std::mt19937_64 rng(seed);
    VideoClip c;
    c.frames = to_tensor(frames);
    return to_array(shuffle_frames(c, rng).frames);
  }, "frames"_a, "seed"_a = 0);
}

void bind_trainer(py::module_& m) {
  m.def("train", [](const GraphSpec& g, const Checkpoint& w,
                    const std::vector<std::pair<Array, int>>& train_set,
                    const std::vector<std::pair<Array, int>>& val_set, const py::dict& config,
                    double fps) {
    TrainConfig cfg;
    cfg.apply(to_key_values(config));
    const std::vector<VideoClip> tr = to_clips(train_set, fps), va = to_clips(val_set, fps);
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = train(g, w, tr, va, cfg);
    }
    return py::dict("best"_a = r.best, "last"_a = r.last, "history"_a = history_list(r.history),
                    "best_val_loss"_a = r.best_val_loss, "final_lr"_a = r.final_lr);
  }, "graph"_a, "weights"_a, "train_set"_a, "val_set"_a, "config"_a = py::dict(),
        "fps"_a = 25.0,
        "SGD with momentum and the plateau schedule. `config` uses the CLI train keys.");
  m.def("evaluate", [](const GraphSpec& g, const Checkpoint& w,
                       const std::vector<std::pair<Array, int>>& clips, double fps) {
    const EvalResult r = evaluate(g, w, to_clips(clips, fps));
    return py::dict("accuracy"_a = r.accuracy, "loss"_a = r.loss,
                    "predictions"_a = r.predictions);
  }, "graph"_a, "weights"_a, "clips"_a, "fps"_a = 25.0);
}

}  // namespace
}  // namespace i3d

PYBIND11_MODULE(_core, m) {
  m.doc() = "Inflated 3D ConvNet toolkit: graphs, inflation, TV-L1 flow, training.";
  i3d::bind_errors(m);
  i3d::bind_graph(m);
  i3d::bind_checkpoint(m);
  i3d::bind_inflate(m);
  i3d::bind_flow(m);
  i3d::bind_video(m);
  i3d::bind_trainer(m);
  m.def("set_num_threads", &i3d::set_num_threads, "n"_a);
  m.def("num_threads", &i3d::num_threads);
}
