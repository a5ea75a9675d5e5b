#pragma once

#include <filesystem>
#include <vector>

#include "i3d/tensor.hpp"

namespace i3d {

// Per-pixel displacement in pixels; u horizontal (+x right), v vertical
// (+y down). Both (H, W).
struct FlowField {
  Tensor u;
  Tensor v;

  int64_t height() const { return u.dim(0); }
  int64_t width() const { return u.dim(1); }
};

struct TVL1Params {
  double lambda = 0.15;  // data term weight (images are compared on a 0..255 scale)
  double theta = 0.3;    // coupling between u and the auxiliary field v
  double tau = 0.25;     // dual step, at most 0.25
  int warps = 5;
  int inner_iterations = 30;
  double scale_factor = 0.5;
  int max_levels = 8;
  int min_size = 16;     // coarsest pyramid level is at least this many pixels
  double clamp = 20.0;

  void validate() const;
};

struct TVL1Log {
  // Objective sum |grad u| + |grad v| + lambda * |I1(x + w) - I0(x)| at the
  // finest level: entry 0 before the first warp, then one per accepted warp.
  std::vector<double> finest_energy;
  int rejected_warps = 0;  // warps whose result raised the energy and were undone
};

// Coarse-to-fine duality-based TV-L1 between two grayscale (H, W) frames.
// Both frames are mapped to 0..255 with a shared affine normalization first;
// constant frames give zero flow. At the finest level a warp is kept only
// when it does not increase the objective, so the logged energy never rises.
FlowField tvl1(const Tensor& frame_a, const Tensor& frame_b, const TVL1Params& params = {},
               TVL1Log* log = nullptr);

// Objective of `flow` on the two frames (after the same normalization).
double tvl1_energy(const Tensor& frame_a, const Tensor& frame_b, const FlowField& flow,
                   double lambda);

// Consecutive-pair flows of T frames as (2(T-1), H, W) channels u1, v1, u2, ...
// scaled from [-clamp, clamp] to [-1, 1].
Tensor flow_stack(const std::vector<Tensor>& frames, const TVL1Params& params = {});

// (3, H, W) RGB in [0, 1] -> (H, W) with weights 0.299, 0.587, 0.114.
Tensor rgb_to_gray(const Tensor& rgb);

// Middlebury .flo: float 202021.25 ("PIEH"), i32 width, i32 height, then
// row-major interleaved (u, v) f32, all little-endian.
void write_flo(const FlowField& flow, const std::filesystem::path& path);
FlowField read_flo(const std::filesystem::path& path);

}  // namespace i3d
