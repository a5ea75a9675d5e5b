#include "i3d/video.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include "i3d/config.hpp"
#include "i3d/error.hpp"

namespace i3d {
namespace {

int64_t uniform_int(std::mt19937_64& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

VideoClip with_frames(const VideoClip& clip, Tensor frames) {
  VideoClip out;
  out.frames = std::move(frames);
  out.fps = clip.fps;
  out.label = clip.label;
  return out;
}

std::string pnm_token(std::istream& is, const std::string& file) {
  std::string tok;
  while (true) {
    const int c = is.peek();
    if (c == EOF) throw IoError("'" + file + "': truncated PNM header");
    if (std::isspace(c)) {
      is.get();
    } else if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else {
      break;
    }
  }
  while (is.peek() != EOF && !std::isspace(is.peek())) tok.push_back(static_cast<char>(is.get()));
  return tok;
}

int64_t pnm_int(std::istream& is, const std::string& file) {
  const std::string tok = pnm_token(is, file);
  try {
    size_t used = 0;
    const long long v = std::stoll(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw IoError("'" + file + "': bad PNM header field '" + tok + "'");
  }
}

// Pair-shared frames of one synthetic sample, (T, C, H, W), played forward.
Tensor synth_frames(SyntheticTask task, const ClipGeometry& g, std::mt19937_64& rng) {
  const int64_t T = g.frames, C = g.channels, H = g.height, W = g.width;
  Tensor f(Shape{T, C, H, W});
  // Static low-contrast background noise, shared by all frames.
  std::vector<float> background(static_cast<size_t>(C * H * W));
  for (float& v : background) v = static_cast<float>(uniform_real(rng, 0.0, 0.3));
  std::vector<double> tint(static_cast<size_t>(C));
  for (double& v : tint) v = uniform_real(rng, 0.6, 1.0);
  auto px = [&](int64_t t, int64_t c, int64_t y, int64_t x) -> float& {
    return f[((t * C + c) * H + y) * W + x];
  };
  for (int64_t t = 0; t < T; ++t) {
    std::copy(background.begin(), background.end(), f.ptr() + t * C * H * W);
  }

  if (task == SyntheticTask::kDirection) {
    const int64_t side = std::max<int64_t>(4, std::min(H, W) / 4);
    std::vector<float> texture(static_cast<size_t>(C * side * side));
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t i = 0; i < side * side; ++i) {
        texture[static_cast<size_t>(c * side * side + i)] =
            static_cast<float>(tint[static_cast<size_t>(c)] * uniform_real(rng, 0.5, 1.0));
      }
    }
    const int64_t x0 = uniform_int(rng, 0, W - side - (T - 1));
    const int64_t y0 = uniform_int(rng, 0, H - side);
    for (int64_t t = 0; t < T; ++t) {
      for (int64_t c = 0; c < C; ++c) {
        for (int64_t y = 0; y < side; ++y) {
          for (int64_t x = 0; x < side; ++x) {
            px(t, c, y0 + y, x0 + t + x) =
                texture[static_cast<size_t>((c * side + y) * side + x)];
          }
        }
      }
    }
    return f;
  }

  const double max_r = std::min(H, W) / 2.0 - 1.0;
  const double r0 = uniform_real(rng, 1.5, 3.0);
  const double r1 = r0 + uniform_real(rng, 0.5, 0.8) * (max_r - r0);
  const double cy = uniform_real(rng, r1, H - 1 - r1);
  const double cx = uniform_real(rng, r1, W - 1 - r1);
  std::vector<float> texture(static_cast<size_t>(C * H * W));
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < H * W; ++i) {
      texture[static_cast<size_t>(c * H * W + i)] =
          static_cast<float>(tint[static_cast<size_t>(c)] * uniform_real(rng, 0.5, 1.0));
    }
  }
  for (int64_t t = 0; t < T; ++t) {
    const double r = T == 1 ? r0 : r0 + (r1 - r0) * static_cast<double>(t) / (T - 1);
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) > r * r) continue;
        for (int64_t c = 0; c < C; ++c) {
          px(t, c, y, x) = texture[static_cast<size_t>((c * H + y) * W + x)];
        }
      }
    }
  }
  return f;
}

Tensor reverse_time(const Tensor& frames) {
  const int64_t T = frames.dim(0);
  const int64_t per = frames.numel() / T;
  Tensor out(frames.shape());
  for (int64_t t = 0; t < T; ++t) {
    std::copy(frames.ptr() + (T - 1 - t) * per, frames.ptr() + (T - t) * per,
              out.ptr() + t * per);
  }
  return out;
}

}  // namespace

void VideoClip::validate() const {
  if (frames.rank() != 4 || frames.dim(0) < 1) {
    throw ConfigError("video clip frames must be (T >= 1, C, H, W), got " +
                      shape_to_string(frames.shape()));
  }
  if (!(fps > 0.0)) throw ConfigError("video clip fps must be > 0");
}

void AugmentConfig::validate() const {
  if (resize_short_side < 0) throw ConfigError("augment: resize_short_side must be >= 0");
  if (crop < 1) throw ConfigError("augment: crop must be >= 1");
  if (resize_short_side > 0 && crop > resize_short_side) {
    throw ConfigError("augment: crop " + std::to_string(crop) + " exceeds resized short side " +
                      std::to_string(resize_short_side));
  }
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw ConfigError("augment: flip_probability must lie in [0, 1]");
  }
  if (temporal_crop < 0) throw ConfigError("augment: temporal_crop must be >= 0");
}

VideoClip resize_clip(const VideoClip& clip, int64_t height, int64_t width) {
  clip.validate();
  if (height < 1 || width < 1) throw ConfigError("resize: target size must be positive");
  const int64_t T = clip.length(), C = clip.channels(), H = clip.height(), W = clip.width();
  if (H == height && W == width) return clip;
  auto src = [](int64_t i, int64_t in, int64_t out) {
    return out == 1 ? 0.0 : static_cast<double>(i) * (in - 1) / (out - 1);
  };
  Tensor out(Shape{T, C, height, width});
  for (int64_t p = 0; p < T * C; ++p) {
    const float* s = clip.frames.ptr() + p * H * W;
    float* d = out.ptr() + p * height * width;
    for (int64_t y = 0; y < height; ++y) {
      const double sy = src(y, H, height);
      const int64_t y0 = std::min(static_cast<int64_t>(sy), H - 1);
      const int64_t y1 = std::min(y0 + 1, H - 1);
      const double fy = sy - y0;
      for (int64_t x = 0; x < width; ++x) {
        const double sx = src(x, W, width);
        const int64_t x0 = std::min(static_cast<int64_t>(sx), W - 1);
        const int64_t x1 = std::min(x0 + 1, W - 1);
        const double fx = sx - x0;
        const double top = (1 - fx) * s[y0 * W + x0] + fx * s[y0 * W + x1];
        const double bot = (1 - fx) * s[y1 * W + x0] + fx * s[y1 * W + x1];
        d[y * width + x] = static_cast<float>((1 - fy) * top + fy * bot);
      }
    }
  }
  return with_frames(clip, std::move(out));
}

VideoClip resize_short_side(const VideoClip& clip, int64_t short_side) {
  clip.validate();
  const int64_t H = clip.height(), W = clip.width();
  const int64_t s = std::min(H, W);
  if (s == short_side) return clip;
  const double k = static_cast<double>(short_side) / s;
  const int64_t nh = H == s ? short_side : static_cast<int64_t>(std::lround(H * k));
  const int64_t nw = W == s ? short_side : static_cast<int64_t>(std::lround(W * k));
  return resize_clip(clip, nh, nw);
}

VideoClip flip_horizontal(const VideoClip& clip) {
  clip.validate();
  const int64_t W = clip.width();
  Tensor out(clip.frames.shape());
  const int64_t rows = clip.frames.numel() / W;
  for (int64_t r = 0; r < rows; ++r) {
    const float* s = clip.frames.ptr() + r * W;
    float* d = out.ptr() + r * W;
    for (int64_t x = 0; x < W; ++x) d[x] = s[W - 1 - x];
  }
  return with_frames(clip, std::move(out));
}

VideoClip loop_crop(const VideoClip& clip, int64_t start, int64_t length) {
  clip.validate();
  if (start < 0 || length < 1) throw ConfigError("loop_crop: bad start or length");
  const int64_t T = clip.length();
  const int64_t per = clip.frames.numel() / T;
  Shape shape = clip.frames.shape();
  shape[0] = length;
  Tensor out(shape);
  for (int64_t i = 0; i < length; ++i) {
    const int64_t t = (start + i) % T;
    std::copy(clip.frames.ptr() + t * per, clip.frames.ptr() + (t + 1) * per,
              out.ptr() + i * per);
  }
  return with_frames(clip, std::move(out));
}

VideoClip spatial_crop(const VideoClip& clip, int64_t top, int64_t left, int64_t size) {
  clip.validate();
  const int64_t T = clip.length(), C = clip.channels(), H = clip.height(), W = clip.width();
  if (top < 0 || left < 0 || size < 1 || top + size > H || left + size > W) {
    throw ConfigError("spatial_crop: window (" + std::to_string(top) + ", " +
                      std::to_string(left) + ", " + std::to_string(size) + ") outside " +
                      std::to_string(H) + "x" + std::to_string(W));
  }
  Tensor out(Shape{T, C, size, size});
  for (int64_t p = 0; p < T * C; ++p) {
    for (int64_t y = 0; y < size; ++y) {
      const float* s = clip.frames.ptr() + (p * H + top + y) * W + left;
      std::copy(s, s + size, out.ptr() + (p * size + y) * size);
    }
  }
  return with_frames(clip, std::move(out));
}

VideoClip augment_train(const VideoClip& clip, const AugmentConfig& config,
                        std::mt19937_64& rng) {
  if (clip.frames.empty()) throw ConfigError("augment_train: empty clip");
  clip.validate();
  config.validate();
  VideoClip v = config.resize_short_side > 0 ? resize_short_side(clip, config.resize_short_side)
                                             : clip;
  if (config.crop > v.height() || config.crop > v.width()) {
    throw ConfigError("augment_train: crop " + std::to_string(config.crop) + " exceeds frame " +
                      std::to_string(v.height()) + "x" + std::to_string(v.width()));
  }
  const int64_t T = v.length();
  if (config.temporal_crop > 0) {
    // Loop whole copies until the crop fits, then pick a start.
    const int64_t L = config.temporal_crop;
    const int64_t looped = T >= L ? T : ((L + T - 1) / T) * T;
    const int64_t start = uniform_int(rng, 0, looped - L);
    v = loop_crop(v, start, L);
  }
  const int64_t top = uniform_int(rng, 0, v.height() - config.crop);
  const int64_t left = uniform_int(rng, 0, v.width() - config.crop);
  const bool flip = std::bernoulli_distribution(config.flip_probability)(rng);
  v = spatial_crop(v, top, left, config.crop);
  return flip ? flip_horizontal(v) : v;
}

VideoClip eval_preprocess(const VideoClip& clip, const AugmentConfig& config) {
  if (clip.frames.empty()) throw ConfigError("eval_preprocess: empty clip");
  clip.validate();
  config.validate();
  const VideoClip v = config.resize_short_side > 0
                          ? resize_short_side(clip, config.resize_short_side)
                          : clip;
  if (config.crop > v.height() || config.crop > v.width()) {
    throw ConfigError("eval_preprocess: crop " + std::to_string(config.crop) +
                      " exceeds frame " + std::to_string(v.height()) + "x" +
                      std::to_string(v.width()));
  }
  return spatial_crop(v, (v.height() - config.crop) / 2, (v.width() - config.crop) / 2,
                      config.crop);
}

VideoClip subsample_frames(const VideoClip& clip, int64_t keep_one_in) {
  clip.validate();
  if (keep_one_in < 1) throw ConfigError("subsample_frames: keep_one_in must be >= 1");
  const int64_t T = clip.length();
  const int64_t n = (T + keep_one_in - 1) / keep_one_in;
  const int64_t per = clip.frames.numel() / T;
  Shape shape = clip.frames.shape();
  shape[0] = n;
  Tensor out(shape);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t t = i * keep_one_in;
    std::copy(clip.frames.ptr() + t * per, clip.frames.ptr() + (t + 1) * per,
              out.ptr() + i * per);
  }
  VideoClip v = with_frames(clip, std::move(out));
  v.fps = clip.fps / static_cast<double>(keep_one_in);
  return v;
}

VideoClip shuffle_frames(const VideoClip& clip, std::mt19937_64& rng) {
  clip.validate();
  const int64_t T = clip.length();
  std::vector<int64_t> order(static_cast<size_t>(T));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const int64_t per = clip.frames.numel() / T;
  Tensor out(clip.frames.shape());
  for (int64_t i = 0; i < T; ++i) {
    const int64_t t = order[static_cast<size_t>(i)];
    std::copy(clip.frames.ptr() + t * per, clip.frames.ptr() + (t + 1) * per,
              out.ptr() + i * per);
  }
  return with_frames(clip, std::move(out));
}

SyntheticTask parse_task(const std::string& name) {
  if (name == "direction") return SyntheticTask::kDirection;
  if (name == "order") return SyntheticTask::kOrder;
  throw ConfigError("unknown synthetic task '" + name + "' (expected direction or order)");
}

std::string to_string(SyntheticTask task) {
  return task == SyntheticTask::kDirection ? "direction" : "order";
}

std::vector<VideoClip> gen_synthetic_temporal(SyntheticTask task, int64_t n_per_class,
                                              const ClipGeometry& g, uint64_t seed) {
  if (n_per_class < 1) throw ConfigError("gen_synthetic_temporal: n_per_class must be >= 1");
  if (g.frames < 2 || g.channels < 1) {
    throw ConfigError("gen_synthetic_temporal: need at least 2 frames and 1 channel");
  }
  if (task == SyntheticTask::kDirection) {
    const int64_t side = std::max<int64_t>(4, std::min(g.height, g.width) / 4);
    if (g.height < side || g.width < side + g.frames - 1) {
      throw ConfigError("gen_synthetic_temporal: " + std::to_string(g.height) + "x" +
                        std::to_string(g.width) + " frames cannot fit a " +
                        std::to_string(side) + " px square moving " +
                        std::to_string(g.frames - 1) + " px");
    }
  } else if (std::min(g.height, g.width) < 16) {
    throw ConfigError("gen_synthetic_temporal: order task needs frames of at least 16x16");
  }
  std::vector<VideoClip> clips(static_cast<size_t>(2 * n_per_class));
  for (int64_t i = 0; i < n_per_class; ++i) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(i), static_cast<uint32_t>(i >> 32)};
    std::mt19937_64 rng(seq);
    Tensor forward = synth_frames(task, g, rng);
    VideoClip& a = clips[static_cast<size_t>(2 * i)];
    VideoClip& b = clips[static_cast<size_t>(2 * i + 1)];
    b.frames = reverse_time(forward);
    b.label = 1;
    a.frames = std::move(forward);
    a.label = 0;
  }
  return clips;
}

Tensor read_pnm(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + file + "'");
  const std::string magic = pnm_token(is, file);
  int64_t channels = 0;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw IoError("'" + file + "': not a binary PPM/PGM (magic '" + magic + "')");
  }
  const int64_t w = pnm_int(is, file);
  const int64_t h = pnm_int(is, file);
  const int64_t maxval = pnm_int(is, file);
  if (maxval > 255) throw IoError("'" + file + "': only 8-bit PNM is supported");
  if (w * h > (int64_t{1} << 28)) throw IoError("'" + file + "': image too large");
  is.get();  // single whitespace before the raster
  std::vector<unsigned char> raw(static_cast<size_t>(w * h * channels));
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw IoError("'" + file + "': truncated raster");
  }
  Tensor img(Shape{channels, h, w});
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < channels; ++c) {
        img[(c * h + y) * w + x] =
            static_cast<float>(raw[static_cast<size_t>((y * w + x) * channels + c)]) /
            static_cast<float>(maxval);
      }
    }
  }
  return img;
}

void write_pnm(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("write_pnm: expected (1 or 3, H, W), got " + shape_to_string(image.shape()));
  }
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << (c == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(w * h * c));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t k = 0; k < c; ++k) {
        const float v = std::clamp(image[(k * h + y) * w + x], 0.0f, 1.0f);
        raw[static_cast<size_t>((y * w + x) * c + k)] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("short write to '" + path.string() + "'");
}

void write_frames_dir(const VideoClip& clip, const std::filesystem::path& dir) {
  clip.validate();
  if (clip.channels() != 3) throw ShapeError("write_frames_dir: frames must have 3 channels");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  const int64_t per = clip.frames.numel() / clip.length();
  for (int64_t t = 0; t < clip.length(); ++t) {
    Tensor frame(Shape{3, clip.height(), clip.width()});
    std::copy(clip.frames.ptr() + t * per, clip.frames.ptr() + (t + 1) * per, frame.ptr());
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06lld.ppm", static_cast<long long>(t));
    write_pnm(frame, dir / name);
  }
  std::ofstream meta(dir / "meta.txt");
  if (!meta) throw IoError("cannot write '" + (dir / "meta.txt").string() + "'");
  std::ostringstream fps;
  fps.precision(17);
  fps << clip.fps;
  meta << "fps=" << fps.str() << "\nlabel=" << clip.label << "\n";
}

VideoClip read_frames_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("'" + dir.string() + "' is not a directory");
  }
  static const std::regex kFrame(R"(frame_(\d{6})\.ppm)");
  std::vector<std::pair<int64_t, std::filesystem::path>> frames;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, kFrame)) frames.emplace_back(std::stoll(m[1]), e.path());
  }
  if (frames.empty()) throw IoError("'" + dir.string() + "': no frame_NNNNNN.ppm files");
  std::sort(frames.begin(), frames.end());
  for (size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].first != static_cast<int64_t>(i)) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%06zu.ppm", i);
      throw IoError("'" + dir.string() + "': frame numbering not contiguous, missing " + name);
    }
  }
  VideoClip clip;
  const auto meta_path = dir / "meta.txt";
  if (!std::filesystem::exists(meta_path)) throw IoError("missing '" + meta_path.string() + "'");
  for (const auto& [key, value] : read_key_values(meta_path)) {
    if (key == "fps") {
      clip.fps = parse_double(key, value);
    } else if (key == "label") {
      clip.label = static_cast<int>(parse_int(key, value));
    } else {
      throw ConfigError("'" + meta_path.string() + "': unknown key '" + key + "'");
    }
  }
  Tensor first = read_pnm(frames[0].second);
  if (first.dim(0) != 3) throw IoError("'" + frames[0].second.string() + "': not an RGB PPM");
  const int64_t T = static_cast<int64_t>(frames.size());
  const int64_t per = first.numel();
  Tensor all(Shape{T, 3, first.dim(1), first.dim(2)});
  std::copy(first.data().begin(), first.data().end(), all.ptr());
  for (int64_t t = 1; t < T; ++t) {
    const Tensor f = read_pnm(frames[static_cast<size_t>(t)].second);
    if (f.shape() != first.shape()) {
      throw IoError("'" + frames[static_cast<size_t>(t)].second.string() +
                    "': size differs from frame 0");
    }
    std::copy(f.data().begin(), f.data().end(), all.ptr() + t * per);
  }
  clip.frames = std::move(all);
  clip.validate();
  return clip;
}

std::vector<VideoClip> read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("'" + dir.string() + "' is not a directory");
  }
  std::vector<std::filesystem::path> subdirs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory()) subdirs.push_back(e.path());
  }
  if (subdirs.empty()) throw IoError("'" + dir.string() + "': no clip directories");
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<VideoClip> clips;
  clips.reserve(subdirs.size());
  for (const auto& d : subdirs) clips.push_back(read_frames_dir(d));
  return clips;
}

void write_dataset(const std::vector<VideoClip>& clips, const std::filesystem::path& dir) {
  for (size_t i = 0; i < clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%06zu", i);
    write_frames_dir(clips[i], dir / name);
  }
}

}  // namespace i3d
