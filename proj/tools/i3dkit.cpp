// i3dkit: command-line front end for the i3d library.
//
// Exit codes: 0 success or pass, 1 verification failure, 2 usage error,
// 3 I/O error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "i3d/checkpoint.hpp"
#include "i3d/config.hpp"
#include "i3d/error.hpp"
#include "i3d/flow.hpp"
#include "i3d/graph.hpp"
#include "i3d/inflate.hpp"
#include "i3d/model.hpp"
#include "i3d/network.hpp"
#include "i3d/parallel.hpp"
#include "i3d/trainer.hpp"
#include "i3d/video.hpp"

namespace fs = std::filesystem;
using namespace i3d;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options every command accepts.
struct Common {
  uint64_t seed = 0;
  std::string out;
  int threads = 0;
  std::string config;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "RNG seed")->capture_default_str();
  app->add_option("--out", c.out, "Output path");
  app->add_option("--threads", c.threads, "Worker thread cap (1 = bit-reproducible)");
  app->add_option("--config", c.config, "key = value file; flags override its values");
}

// Fills options not given on the command line from the config file.
void merge_config(CLI::App* app, const std::string& path) {
  if (path.empty()) return;
  for (const auto& [key, value] : read_key_values(path)) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    if (name == "config") throw UsageError(path + ": 'config' cannot be set from a config file");
    CLI::Option* opt = app->get_option_no_throw("--" + name);
    if (opt == nullptr) {
      throw UsageError(path + ": unknown key '" + key + "' for command '" + app->get_name() + "'");
    }
    if (opt->count() == 0) {
      opt->add_result(value);
      opt->run_callback();
    }
  }
}

// Architecture flags shared by build, count-params and receptive-field.
struct ArchOpts {
  std::string family = "i3d";
  int64_t classes = 400;
  double width = 1.0;
  int64_t frames = 0;
  int64_t size = 0;
  int64_t channels = 3;
  int64_t flow_frames = 10;
  std::string streams = "both";
  bool toy = false;
  CLI::Option* family_opt = nullptr;
  CLI::Option* classes_opt = nullptr;
};

void add_arch(CLI::App* app, ArchOpts& a) {
  a.family_opt = app->add_option("--family", a.family,
                                 "lstm | c3d | two-stream | fused3d | i3d | inception2d")
                     ->capture_default_str();
  a.classes_opt = app->add_option("--classes", a.classes, "Number of classes")->capture_default_str();
  app->add_option("--width", a.width, "Channel width multiplier in (0, 1]")->capture_default_str();
  app->add_option("--frames", a.frames, "Input frames (0 = family default)");
  app->add_option("--size", a.size, "Square input size in pixels (0 = family default)");
  app->add_option("--channels", a.channels, "RGB input channels")->capture_default_str();
  app->add_option("--flow-frames", a.flow_frames, "Stacked flow frames (two-stream, fused)")
      ->capture_default_str();
  app->add_option("--streams", a.streams, "i3d streams: rgb | flow | both")->capture_default_str();
  app->add_flag("--toy", a.toy, "Allow geometry other than the family's full-scale input");
}

ArchConfig arch_config(const ArchOpts& a) {
  ArchConfig c = ArchConfig::defaults(parse_family(a.family));
  c.num_classes = a.classes;
  c.width_multiplier = a.width;
  if (a.frames > 0) c.frames = a.frames;
  if (a.size > 0) c.height = c.width = a.size;
  c.channels = a.channels;
  c.flow_frames = a.flow_frames;
  c.streams = parse_streams(a.streams);
  c.toy_geometry = a.toy;
  return c;
}

struct FlowOpts {
  TVL1Params p;
};

void add_flow(CLI::App* app, FlowOpts& f) {
  app->add_option("--lambda", f.p.lambda, "Data term weight")->capture_default_str();
  app->add_option("--theta", f.p.theta, "Coupling")->capture_default_str();
  app->add_option("--tau", f.p.tau, "Dual step (<= 0.25)")->capture_default_str();
  app->add_option("--warps", f.p.warps, "Warps per level")->capture_default_str();
  app->add_option("--iterations", f.p.inner_iterations, "Inner iterations per warp")
      ->capture_default_str();
  app->add_option("--scale", f.p.scale_factor, "Pyramid scale factor")->capture_default_str();
  app->add_option("--levels", f.p.max_levels, "Maximum pyramid levels")->capture_default_str();
  app->add_option("--clamp", f.p.clamp, "Flow clamp in pixels")->capture_default_str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw IoError("short write to '" + path + "'");
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError(flag + " is required");
}

std::string rf_triplet(const std::array<int64_t, 3>& v) {
  // Printed as time,x,y: x is the width axis.
  return std::to_string(v[0]) + "," + std::to_string(v[2]) + "," + std::to_string(v[1]);
}

Tensor read_gray(const std::string& path) {
  const Tensor img = read_pnm(path);
  if (img.dim(0) == 3) return rgb_to_gray(img);
  return img.reshaped({img.dim(1), img.dim(2)});
}

// Clips of `dir/split` when that subdirectory exists, else of `dir`.
std::vector<VideoClip> load_split(const std::string& dir, const std::string& split) {
  const fs::path sub = fs::path(dir) / split;
  return read_dataset(fs::is_directory(sub) ? sub : fs::path(dir));
}

int64_t class_count(const std::vector<VideoClip>& clips) {
  int max_label = -1;
  for (const VideoClip& c : clips) max_label = std::max(max_label, c.label);
  return std::max<int64_t>(2, max_label + 1);
}

// ---------------------------------------------------------------------------

int cmd_build(const ArchOpts& a, const Common& c) {
  const ModelSpec spec{arch_config(a), false, {}};
  const GraphSpec g = build_model(spec);
  std::cout << graph_summary(g) << "params: " << count_params(g) << "\n";
  if (!c.out.empty()) {
    Checkpoint w = init_weights(g, c.seed);
    w.family = model_tag(spec);
    save_checkpoint(w, c.out);
    std::cout << "wrote " << c.out << "\n";
  }
  return 0;
}

GraphSpec graph_from(const ArchOpts& a, const std::string& ckpt) {
  if (ckpt.empty()) return build_model(ModelSpec{arch_config(a), false, {}});
  return build_model(parse_model_tag(load_checkpoint(ckpt).family));
}

int cmd_count(const ArchOpts& a, const std::string& ckpt) {
  std::cout << count_params(graph_from(a, ckpt)) << "\n";
  return 0;
}

int cmd_footprint(int64_t frames, int64_t stride, double fps) {
  // Checked here rather than by the parser so a config file can supply it.
  if (frames == 0) throw UsageError("--frames is required");
  std::cout << temporal_footprint(frames, stride, fps) << "s\n";
  return 0;
}

int cmd_receptive_field(const ArchOpts& a, const std::string& ckpt, const std::string& layer) {
  const GraphSpec g = graph_from(a, ckpt);
  auto print = [](const std::string& id, const ReceptiveField& rf) {
    std::cout << id << "  rf=" << rf_triplet(rf.extent) << "  jump=" << rf_triplet(rf.jump)
              << "  start=" << rf_triplet(rf.start) << "\n";
  };
  if (!layer.empty()) {
    print(layer, receptive_field(g, layer));
  } else {
    for (const auto& [id, rf] : receptive_fields(g)) print(id, rf);
  }
  return 0;
}

int cmd_inflate(const std::string& ckpt2d, const std::string& rule_path, int64_t frames,
                const Common& c) {
  require(ckpt2d, "--graph2d");
  require(c.out, "--out");
  const Checkpoint w2 = load_checkpoint(ckpt2d);
  const ModelSpec spec2 = parse_model_tag(w2.family);
  if (spec2.inflated) throw UsageError("'" + ckpt2d + "' already holds an inflated model");
  InflationRule rule = InflationRule::i3d();
  if (!rule_path.empty()) {
    std::ifstream is(rule_path);
    if (!is) throw IoError("cannot open '" + rule_path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    rule = InflationRule::parse(ss.str());
  }
  if (frames > 0) rule.frames = frames;
  const GraphSpec g2 = build_model(spec2);
  Inflated inf = inflate_graph(g2, w2, rule);
  ModelSpec spec3 = spec2;
  spec3.inflated = true;
  spec3.rule = rule;
  inf.weights.family = model_tag(spec3);
  save_checkpoint(inf.weights, c.out);
  std::cout << "inflated " << inf.weights.size() << " tensors, " << count_params(inf.graph)
            << " params -> " << c.out << "\n";
  return 0;
}

int cmd_verify(const std::string& a_path, const std::string& b_path, double tol, int images,
               int64_t frames, const Common& c) {
  require(a_path, "--ckpt2d");
  require(b_path, "--ckpt3d");
  if (images < 1) throw UsageError("--images must be >= 1");
  const Checkpoint w2 = load_checkpoint(a_path);
  const Checkpoint w3 = load_checkpoint(b_path);
  const GraphSpec g2 = build_model(parse_model_tag(w2.family));
  const GraphSpec g3 = build_model(parse_model_tag(w3.family));
  const Shape& in = g2.node(g2.inputs().front()).shape;
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  bool passed = true;
  double worst = 0.0;
  std::string worst_table;
  std::ostringstream lines;
  for (int i = 0; i < images; ++i) {
    Tensor img(Shape{in[0], in[2], in[3]});
    for (float& v : img.data()) v = u(rng);
    const FixedPointReport r = verify_fixed_point(g2, w2, g3, w3, img, tol, frames);
    lines << "image " << i << ": T=" << r.frames << " max logit deviation "
          << r.max_logit_deviation << " " << (r.passed ? "pass" : "FAIL") << "\n";
    passed = passed && r.passed;
    if (worst_table.empty() || r.max_logit_deviation > worst || !r.passed) {
      worst = std::max(worst, r.max_logit_deviation);
      worst_table = r.to_text();
    }
  }
  std::ostringstream report;
  report << "worst image layers:\n"
         << worst_table << lines.str() << "fixed point " << (passed ? "PASS" : "FAIL")
         << " (tolerance " << tol << ", " << images << " images)\n";
  std::cout << report.str();
  if (!c.out.empty()) write_text(c.out, report.str());
  return passed ? 0 : kExitFail;
}

int cmd_flow(const std::string& a, const std::string& b, const FlowOpts& f, const Common& c) {
  require(a, "--a");
  require(b, "--b");
  const Tensor fa = read_gray(a);
  const Tensor fb = read_gray(b);
  TVL1Log log;
  const FlowField flow = tvl1(fa, fb, f.p, &log);
  double mu = 0.0, mv = 0.0;
  for (int64_t i = 0; i < flow.u.numel(); ++i) {
    mu += flow.u[i];
    mv += flow.v[i];
  }
  const double n = static_cast<double>(flow.u.numel());
  std::cout << "mean flow (" << mu / n << ", " << mv / n << ")\nenergy";
  for (double e : log.finest_energy) std::cout << " " << e;
  std::cout << "\nrejected warps " << log.rejected_warps << "\n";
  if (!c.out.empty()) {
    write_flo(flow, c.out);
    std::cout << "wrote " << c.out << "\n";
  }
  return 0;
}

int cmd_flow_stack(const std::string& dir, const FlowOpts& f, const Common& c) {
  require(dir, "--dir");
  const VideoClip clip = read_frames_dir(dir);
  if (clip.length() < 2) throw UsageError("'" + dir + "' holds fewer than 2 frames");
  const fs::path out = c.out.empty() ? fs::path(dir) / "flow" : fs::path(c.out);
  fs::create_directories(out);
  const int64_t per = clip.frames.numel() / clip.length();
  auto gray = [&](int64_t t) {
    Tensor f3(Shape{clip.channels(), clip.height(), clip.width()});
    std::copy(clip.frames.ptr() + t * per, clip.frames.ptr() + (t + 1) * per, f3.ptr());
    return rgb_to_gray(f3);
  };
  Tensor prev = gray(0);
  for (int64_t t = 1; t < clip.length(); ++t) {
    Tensor next = gray(t);
    char name[32];
    std::snprintf(name, sizeof(name), "flow_%06lld.flo", static_cast<long long>(t - 1));
    write_flo(tvl1(prev, next, f.p), out / name);
    prev = std::move(next);
  }
  std::cout << "wrote " << clip.length() - 1 << " flow fields to " << out.string() << "\n";
  return 0;
}

int cmd_gen_data(const std::string& task_name, int64_t n, int64_t frames, int64_t size,
                 const Common& c) {
  require(c.out, "--out");
  const SyntheticTask task = parse_task(task_name);
  ClipGeometry g;
  g.frames = frames;
  g.height = g.width = size;
  const int64_t n_val = std::max<int64_t>(1, n / 4);
  const int64_t n_test = std::max<int64_t>(1, n / 2);
  const fs::path out(c.out);
  write_dataset(gen_synthetic_temporal(task, n, g, c.seed), out / "train");
  write_dataset(gen_synthetic_temporal(task, n_val, g, c.seed + 1), out / "val");
  write_dataset(gen_synthetic_temporal(task, n_test, g, c.seed + 2), out / "test");
  std::cout << to_string(task) << ": " << 2 * n << " train, " << 2 * n_val << " val, "
            << 2 * n_test << " test clips -> " << out.string() << "\n";
  return 0;
}

struct TrainOpts {
  std::string data;
  std::string init;
  TrainConfig cfg;
};

int cmd_train(const ArchOpts& a, const TrainOpts& t, const Common& c) {
  require(t.data, "--data");
  require(c.out, "--out");
  const std::vector<VideoClip> train_set = read_dataset(fs::path(t.data) / "train");
  const std::vector<VideoClip> val_set = read_dataset(fs::path(t.data) / "val");
  Checkpoint weights;
  ModelSpec spec;
  if (!t.init.empty()) {
    weights = load_checkpoint(t.init);
    spec = parse_model_tag(weights.family);
  } else {
    ArchOpts arch = a;
    if (a.classes_opt->count() == 0) arch.classes = class_count(train_set);
    const VideoClip& first = train_set.front();
    if (arch.size == 0) arch.size = first.height();
    const Family fam = parse_family(arch.family);
    if (arch.frames == 0) {
      const bool single = fam == Family::kInception2d || fam == Family::kTwoStream;
      arch.frames = single ? 1 : (fam == Family::kFused3d ? 5 : first.length());
    }
    arch.channels = first.channels();
    spec = ModelSpec{arch_config(arch), false, {}};
  }
  const GraphSpec g = build_model(spec);
  if (t.init.empty()) weights = init_weights(g, c.seed);
  TrainConfig cfg = t.cfg;
  cfg.seed = c.seed;
  cfg.validate();
  TrainResult r = train(g, weights, train_set, val_set, cfg);
  const fs::path out(c.out);
  fs::create_directories(out);
  r.best.family = model_tag(spec);
  r.last.family = model_tag(spec);
  save_checkpoint(r.best, out / "best.ckpt");
  save_checkpoint(r.last, out / "last.ckpt");
  write_text((out / "history.csv").string(), history_csv(r.history));
  const MetricRow& last = r.history.back();
  std::cout << "steps " << cfg.max_steps << ", final lr " << r.final_lr << ", best val loss "
            << r.best_val_loss << ", last val acc " << last.val_acc << " -> " << out.string()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& split,
             bool shuffle, const Common& c) {
  require(ckpt, "--ckpt");
  require(data, "--data");
  const Checkpoint w = load_checkpoint(ckpt);
  const GraphSpec g = build_model(parse_model_tag(w.family));
  std::vector<VideoClip> clips = load_split(data, split);
  if (shuffle) {
    std::mt19937_64 rng(c.seed);
    for (VideoClip& clip : clips) clip = shuffle_frames(clip, rng);
  }
  const EvalResult r = evaluate(g, w, clips);
  std::ostringstream os;
  os << "accuracy " << r.accuracy << " (" << clips.size() << " clips), loss " << r.loss << "\n";
  for (size_t k = 0; k < r.per_class_total.size(); ++k) {
    os << "class " << k << ": " << r.per_class_correct[k] << "/" << r.per_class_total[k] << "\n";
  }
  std::cout << os.str();
  if (!c.out.empty()) {
    std::ostringstream csv;
    csv << "clip,label,prediction\n";
    for (size_t i = 0; i < clips.size(); ++i) {
      csv << i << "," << clips[i].label << "," << r.predictions[i] << "\n";
    }
    write_text(c.out, csv.str());
  }
  return 0;
}

int cmd_dump_filters(const std::string& ckpt, const std::string& layer, int zoom,
                     const Common& c) {
  require(ckpt, "--ckpt");
  require(c.out, "--out");
  if (zoom < 1) throw UsageError("--zoom must be >= 1");
  const Checkpoint w = load_checkpoint(ckpt);
  const Tensor& k = w.get(layer + "/weight");
  if (k.rank() != 4 && k.rank() != 5) {
    throw UsageError("'" + layer + "' is not a convolution (weight " +
                     shape_to_string(k.shape()) + ")");
  }
  const int64_t co = k.dim(0), ci = k.dim(1);
  const int64_t kt = k.rank() == 5 ? k.dim(2) : 1;
  const int64_t kh = k.dim(k.rank() - 2), kw = k.dim(k.rank() - 1);
  // One image per filter: input channels top to bottom, time left to right,
  // cells separated by a 1-pixel border.
  const int64_t cell_h = kh * zoom, cell_w = kw * zoom;
  const int64_t img_h = ci * (cell_h + 1) + 1, img_w = kt * (cell_w + 1) + 1;
  const fs::path out(c.out);
  fs::create_directories(out);
  const int64_t per = ci * kt * kh * kw;
  for (int64_t o = 0; o < co; ++o) {
    const float* f = k.ptr() + o * per;
    const auto [lo, hi] = std::minmax_element(f, f + per);
    const float range = *hi > *lo ? *hi - *lo : 1.0f;
    Tensor img(Shape{1, img_h, img_w}, 1.0f);
    for (int64_t i = 0; i < ci; ++i) {
      for (int64_t t = 0; t < kt; ++t) {
        for (int64_t y = 0; y < cell_h; ++y) {
          for (int64_t x = 0; x < cell_w; ++x) {
            const float v = f[((i * kt + t) * kh + y / zoom) * kw + x / zoom];
            img[(i * (cell_h + 1) + 1 + y) * img_w + t * (cell_w + 1) + 1 + x] = (v - *lo) / range;
          }
        }
      }
    }
    char name[32];
    std::snprintf(name, sizeof(name), "filter_%04lld.pgm", static_cast<long long>(o));
    write_pnm(img, out / name);
  }
  std::cout << "wrote " << co << " filter grids (" << ci << " channels x " << kt
            << " time slices) to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"i3dkit: inflated 3D ConvNet toolkit"};
  app.require_subcommand(1);

  Common common;
  ArchOpts arch;
  FlowOpts flow;
  TrainOpts topts;
  std::string ckpt, ckpt2d, ckpt3d, rule, layer = "", dir, fa, fb, data, split = "test",
                                          task = "order";
  double tol = 1e-4, fps = 25.0;
  int images = 10, zoom = 8;
  int64_t frames = 0, stride = 1, n = 100, gen_frames = 16, gen_size = 32;
  bool shuffle = false;

  auto* build = app.add_subcommand("build", "Build a graph, print its summary and parameter count");
  add_arch(build, arch);

  auto* count = app.add_subcommand("count-params", "Print the trainable parameter count");
  add_arch(count, arch);
  count->add_option("--ckpt", ckpt, "Checkpoint whose model to count");

  auto* foot = app.add_subcommand("footprint", "Temporal footprint in seconds");
  foot->add_option("--frames", frames, "Frames used (required)");
  foot->add_option("--fps", fps, "Source frame rate")->capture_default_str();
  foot->add_option("--stride", stride, "Temporal subsampling (keep one in N)")
      ->capture_default_str();

  auto* rf = app.add_subcommand("receptive-field", "Receptive fields as time,x,y");
  add_arch(rf, arch);
  rf->add_option("--ckpt", ckpt, "Checkpoint whose model to analyze");
  rf->add_option("--layer", layer, "Layer id (default: every layer)");

  auto* infl = app.add_subcommand("inflate", "Inflate a 2D checkpoint into 3D");
  infl->add_option("--graph2d", ckpt2d, "2D checkpoint");
  infl->add_option("--rule", rule, "Inflation rule file (default: i3d pacing)");
  infl->add_option("--frames", frames, "Clip length of the inflated graph");

  auto* verify = app.add_subcommand("verify-fixed-point", "Check the boring-video fixed point");
  verify->add_option("--ckpt2d", ckpt2d, "2D checkpoint");
  verify->add_option("--ckpt3d", ckpt3d, "Inflated checkpoint");
  verify->add_option("--tol", tol, "Tolerance")->capture_default_str();
  verify->add_option("--images", images, "Random images to test")->capture_default_str();
  verify->add_option("--frames", frames, "Boring-video length (0 = 2x temporal RF)");

  auto* fl = app.add_subcommand("flow", "TV-L1 flow between two frames");
  fl->add_option("--a", fa, "First frame (PPM/PGM)");
  fl->add_option("--b", fb, "Second frame (PPM/PGM)");
  add_flow(fl, flow);

  auto* fs_cmd = app.add_subcommand("flow-stack", "Flow of every consecutive frame pair");
  fs_cmd->add_option("--dir", dir, "Frame directory");
  add_flow(fs_cmd, flow);

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic temporal dataset");
  gen->add_option("--task", task, "direction | order")->capture_default_str();
  gen->add_option("--n", n, "Training clips per class")->capture_default_str();
  gen->add_option("--frames", gen_frames, "Frames per clip")->capture_default_str();
  gen->add_option("--size", gen_size, "Frame size in pixels")->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train a model on a dataset directory");
  add_arch(tr, arch);
  tr->add_option("--data", topts.data, "Dataset with train/ and val/ subdirectories");
  tr->add_option("--init", topts.init, "Start from this checkpoint (its model is used)");
  TrainConfig& tc = topts.cfg;
  tr->add_option("--lr", tc.learning_rate, "Base learning rate")->capture_default_str();
  tr->add_option("--momentum", tc.momentum, "Momentum")->capture_default_str();
  tr->add_option("--drop-factor", tc.drop_factor, "Learning-rate drop on plateau")
      ->capture_default_str();
  tr->add_option("--patience", tc.patience, "Evaluations without improvement (0 = never drop)")
      ->capture_default_str();
  tr->add_option("--min-delta", tc.min_delta, "Minimum val-loss improvement")
      ->capture_default_str();
  tr->add_option("--max-steps", tc.max_steps, "Training steps")->capture_default_str();
  tr->add_option("--batch-size", tc.batch_size, "Clips per step")->capture_default_str();
  tr->add_option("--eval-interval", tc.eval_interval, "Steps between evaluations")
      ->capture_default_str();
  tr->add_option("--clip-norm", tc.clip_norm, "Global gradient-norm clip (0 = off)")
      ->capture_default_str();
  tr->add_flag("--augment", tc.augment, "Random crop/flip/temporal crop per sampled clip");
  tr->add_option("--crop", tc.augmentation.crop, "Augmentation crop size")->capture_default_str();
  tr->add_option("--temporal-crop", tc.augmentation.temporal_crop, "Augmentation clip length")
      ->capture_default_str();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint");
  ev->add_option("--data", data, "Dataset directory");
  ev->add_option("--split", split, "Subdirectory to evaluate when present")->capture_default_str();
  ev->add_flag("--shuffle-frames", shuffle, "Randomly permute frames of every clip");

  auto* dump = app.add_subcommand("dump-filters", "Write per-filter PGM grids");
  dump->add_option("--ckpt", ckpt, "Checkpoint");
  dump->add_option("--layer", layer, "Convolution layer id")->capture_default_str();
  dump->add_option("--zoom", zoom, "Pixels per kernel tap")->capture_default_str();

  for (CLI::App* sub : app.get_subcommands({})) add_common(sub, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    merge_config(sub, common.config);
    if (common.threads > 0) set_num_threads(common.threads);
    const std::string name = sub->get_name();
    if (name == "build") return cmd_build(arch, common);
    if (name == "count-params") return cmd_count(arch, ckpt);
    if (name == "footprint") return cmd_footprint(frames, stride, fps);
    if (name == "receptive-field") return cmd_receptive_field(arch, ckpt, layer);
    if (name == "inflate") return cmd_inflate(ckpt2d, rule, frames, common);
    if (name == "verify-fixed-point") return cmd_verify(ckpt2d, ckpt3d, tol, images, frames, common);
    if (name == "flow") return cmd_flow(fa, fb, flow, common);
    if (name == "flow-stack") return cmd_flow_stack(dir, flow, common);
    if (name == "gen-data") return cmd_gen_data(task, n, gen_frames, gen_size, common);
    if (name == "train") return cmd_train(arch, topts, common);
    if (name == "eval") return cmd_eval(ckpt, data, split, shuffle, common);
    if (name == "dump-filters") {
      if (layer.empty()) layer = "conv1";
      return cmd_dump_filters(ckpt, layer, zoom, common);
    }
    throw UsageError("unknown command '" + name + "'");
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFail;
  }
}
