#pragma once

#include <vector>

#include "otmatch/autodiff.hpp"
#include "otmatch/data.hpp"
#include "otmatch/rng.hpp"

namespace otmatch {

struct ShapeEncoderConfig {
  std::size_t d1 = 64;       // first per-point layer
  std::size_t d2 = 128;      // second per-point layer
  std::size_t d3 = 128;      // third layer and global context width
  std::size_t d_mid = 128;   // width of the three tap projections
  std::size_t d_color = 32;  // color branch width
  std::size_t d = 64;        // shared embedding width
  int num_classes = 4;
  double min_part_fraction = 0.01;
  bool use_color = true;
};

struct ShapeEncoderParams {
  // per-point stack
  Parameter w1, b1, w2, b2, w3, b3;
  // post-global-context layer
  Parameter w_ctx, b_ctx;
  // tap projections and fusion
  Parameter w_f1, b_f1, w_f2, b_f2, w_f3, b_f3;
  Parameter w_c1, b_c1, w_c2, b_c2;
  Parameter w_out, b_out;
  // segmentation head
  Parameter w_seg, b_seg;

  static ShapeEncoderParams init(const ShapeEncoderConfig& cfg, Rng& rng);
  std::vector<Parameter*> all();
};

struct PointFeatures {
  Tape::Id fused;  // l x d
  Tape::Id tap1;   // l x d1
  Tape::Id tap2;   // l x d2
  Tape::Id tap3;   // l x d3
};

struct SegmentationOutput {
  Tape::Id logits;          // l x C
  std::vector<int> labels;  // argmax per row, ties to the lowest class id
};

struct PartPoolResult {
  Tape::Id parts;  // n x d
  std::vector<int> part_classes;
  std::vector<std::size_t> part_sizes;
  bool whole_shape_fallback = false;
};

enum class PartSource { Predicted, GroundTruth };

// Shared per-point MLP over xyz with a global max-pool of the third
// layer tiled back onto every point, three tap projections summed, the
// color branch concatenated, and a final linear map to width d.
PointFeatures backbone_forward(Tape& t, const ColoredPointCloud& cloud,
                               ShapeEncoderParams& p,
                               const ShapeEncoderConfig& cfg);

SegmentationOutput segment(Tape& t, const PointFeatures& f,
                           ShapeEncoderParams& p);

// Groups fused point features by label, drops groups holding less than
// min_fraction of the points, and mean-pools each retained group. If
// everything is dropped the whole shape becomes one part.
PartPoolResult part_pool(Tape& t, Tape::Id features,
                         const std::vector<int>& assignment,
                         double min_fraction);

struct ShapeEncoding {
  PointFeatures features;
  SegmentationOutput seg;
  PartPoolResult parts;
};

// Full encoder: backbone, segmentation head, part pooling with either
// predicted or ground-truth assignments. Gradients flow through the
// pooled features; the assignment itself is not differentiated.
ShapeEncoding encode_shape(Tape& t, const ColoredPointCloud& cloud,
                           ShapeEncoderParams& p,
                           const ShapeEncoderConfig& cfg, PartSource source);

// Uniform Glorot init for weights, zeros for biases.
Matrix glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace otmatch
