#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "i3d/tensor.hpp"

namespace i3d {

// Frames (T, C, H, W) in [0, 1].
struct VideoClip {
  Tensor frames;
  double fps = 25.0;
  int label = -1;  // -1 when unlabeled

  int64_t length() const { return frames.dim(0); }
  int64_t channels() const { return frames.dim(1); }
  int64_t height() const { return frames.dim(2); }
  int64_t width() const { return frames.dim(3); }

  // Throws ConfigError unless frames are (T >= 1, C, H, W) and fps > 0.
  void validate() const;
};

struct AugmentConfig {
  int64_t resize_short_side = 256;  // 0 keeps the source size
  int64_t crop = 224;
  double flip_probability = 0.5;
  int64_t temporal_crop = 0;        // 0 keeps every frame

  void validate() const;
};

// Corner-aligned bilinear resize of every frame to (height, width).
VideoClip resize_clip(const VideoClip& clip, int64_t height, int64_t width);
// Scales so the shorter side equals `short_side`; no-op when it already does.
VideoClip resize_short_side(const VideoClip& clip, int64_t short_side);
VideoClip flip_horizontal(const VideoClip& clip);
// Frames [start, start + length) of the clip repeated end-to-start.
VideoClip loop_crop(const VideoClip& clip, int64_t start, int64_t length);
// Spatial window (top, left, size, size) of every frame.
VideoClip spatial_crop(const VideoClip& clip, int64_t top, int64_t left, int64_t size);

// Resize, then one random crop position, temporal start and flip decision per
// clip applied to all frames. Clips shorter than the temporal crop are looped.
VideoClip augment_train(const VideoClip& clip, const AugmentConfig& config,
                        std::mt19937_64& rng);
// Resize, then a center crop at floor((dim - crop) / 2); all frames, no flip.
VideoClip eval_preprocess(const VideoClip& clip, const AugmentConfig& config);
// Frames 0, k, 2k, ...; fps divides by k.
VideoClip subsample_frames(const VideoClip& clip, int64_t keep_one_in);
// Frames permuted by a random permutation drawn from `rng`.
VideoClip shuffle_frames(const VideoClip& clip, std::mt19937_64& rng);

// Synthetic two-class tasks. Each sample is a pair of clips sharing every
// frame: class 1 is class 0 played backwards, so any function of a single
// frame (or of the frame multiset) carries no label information.
//   direction: a textured square slides right (class 0) or left (class 1).
//   order:     a textured disk grows (class 0) or shrinks (class 1).
enum class SyntheticTask { kDirection, kOrder };
SyntheticTask parse_task(const std::string& name);
std::string to_string(SyntheticTask task);

struct ClipGeometry {
  int64_t frames = 16;
  int64_t height = 32;
  int64_t width = 32;
  int64_t channels = 3;
};

// 2 * n_per_class clips, alternating labels 0, 1, 0, 1, ...; pair i uses a
// seed derived from (seed, i), so generation is order-independent.
std::vector<VideoClip> gen_synthetic_temporal(SyntheticTask task, int64_t n_per_class,
                                              const ClipGeometry& geometry, uint64_t seed);

// Images as (C, H, W) in [0, 1]; 8-bit binary PPM (P6, C = 3) and PGM (P5, C = 1).
Tensor read_pnm(const std::filesystem::path& path);
void write_pnm(const Tensor& image, const std::filesystem::path& path);

// Directory of frame_000000.ppm, frame_000001.ppm, ... plus meta.txt with
// `fps=<f>` and `label=<i>` lines.
void write_frames_dir(const VideoClip& clip, const std::filesystem::path& dir);
VideoClip read_frames_dir(const std::filesystem::path& dir);

// Subdirectories of `dir` (sorted by name) read as clips.
std::vector<VideoClip> read_dataset(const std::filesystem::path& dir);
void write_dataset(const std::vector<VideoClip>& clips, const std::filesystem::path& dir);

}  // namespace i3d
