#include "otmatch/shape_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace otmatch {

Matrix glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Matrix m(fan_in, fan_out);
  const double bound =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : m.data) x = rng.uniform(-bound, bound);
  return m;
}

ShapeEncoderParams ShapeEncoderParams::init(const ShapeEncoderConfig& cfg,
                                            Rng& rng) {
  ShapeEncoderParams p;
  const auto w = [&](const char* id, std::size_t in, std::size_t out) {
    return Parameter(std::string("shape.") + id, glorot(in, out, rng));
  };
  const auto b = [&](const char* id, std::size_t out) {
    return Parameter(std::string("shape.") + id, Matrix(1, out));
  };
  p.w1 = w("w1", 3, cfg.d1);
  p.b1 = b("b1", cfg.d1);
  p.w2 = w("w2", cfg.d1, cfg.d2);
  p.b2 = b("b2", cfg.d2);
  p.w3 = w("w3", cfg.d2, cfg.d3);
  p.b3 = b("b3", cfg.d3);
  p.w_ctx = w("w_ctx", 2 * cfg.d3, cfg.d3);
  p.b_ctx = b("b_ctx", cfg.d3);
  p.w_f1 = w("w_f1", cfg.d1, cfg.d_mid);
  p.b_f1 = b("b_f1", cfg.d_mid);
  p.w_f2 = w("w_f2", cfg.d2, cfg.d_mid);
  p.b_f2 = b("b_f2", cfg.d_mid);
  p.w_f3 = w("w_f3", cfg.d3, cfg.d_mid);
  p.b_f3 = b("b_f3", cfg.d_mid);
  p.w_c1 = w("w_c1", 3, cfg.d_color);
  p.b_c1 = b("b_c1", cfg.d_color);
  p.w_c2 = w("w_c2", cfg.d_color, cfg.d_color);
  p.b_c2 = b("b_c2", cfg.d_color);
  p.w_out = w("w_out", cfg.d_mid + cfg.d_color, cfg.d);
  p.b_out = b("b_out", cfg.d);
  p.w_seg = w("w_seg", cfg.d, static_cast<std::size_t>(cfg.num_classes));
  p.b_seg = b("b_seg", static_cast<std::size_t>(cfg.num_classes));
  return p;
}

std::vector<Parameter*> ShapeEncoderParams::all() {
  return {&w1,   &b1,   &w2,   &b2,   &w3,   &b3,   &w_ctx, &b_ctx,
          &w_f1, &b_f1, &w_f2, &b_f2, &w_f3, &b_f3, &w_c1,  &b_c1,
          &w_c2, &b_c2, &w_out, &b_out, &w_seg, &b_seg};
}

namespace {

// x . w + b with the bias row tiled over all rows.
Tape::Id affine(Tape& t, Tape::Id x, Parameter& w, Parameter& b) {
  const std::size_t rows = t.value(x).rows;
  Tape::Id y = t.matmul(x, t.param(w));
  return t.add(y, t.broadcast_row(t.param(b), rows));
}

}  // namespace

PointFeatures backbone_forward(Tape& t, const ColoredPointCloud& cloud,
                               ShapeEncoderParams& pp,
                               const ShapeEncoderConfig& cfg) {
  const std::size_t l = cloud.num_points();
  if (l < 1) throw DataError("backbone_forward: empty point cloud");

  Tape::Id xyz = t.ref(cloud.points);

  Tape::Id a1 = t.tanh(affine(t, xyz, pp.w1, pp.b1));     // l x d1
  Tape::Id a2 = t.tanh(affine(t, a1, pp.w2, pp.b2));      // l x d2
  Tape::Id pre3 = t.tanh(affine(t, a2, pp.w3, pp.b3));    // l x d3

  // Global context: max over points, tiled back onto every point.
  Tape::Id global = t.pool_rows(pre3, PoolMode::Max);
  Tape::Id tiled = t.broadcast_row(global, l);
  Tape::Id a3 = t.tanh(affine(t, t.concat_cols(pre3, tiled), pp.w_ctx, pp.b_ctx));

  // Tap fusion: three projections summed, color branch concatenated,
  // final linear map to the shared width.
  Tape::Id s = t.add(t.add(affine(t, a1, pp.w_f1, pp.b_f1),
                           affine(t, a2, pp.w_f2, pp.b_f2)),
                     affine(t, a3, pp.w_f3, pp.b_f3));

  Tape::Id color_in;
  if (cfg.use_color) {
    color_in = t.ref(cloud.colors);
  } else {
    color_in = t.input(Matrix(l, 3));
  }
  Tape::Id ch = t.tanh(affine(t, color_in, pp.w_c1, pp.b_c1));
  Tape::Id cf = affine(t, ch, pp.w_c2, pp.b_c2);

  Tape::Id fused = affine(t, t.concat_cols(s, cf), pp.w_out, pp.b_out);
  return PointFeatures{fused, a1, a2, a3};
}

SegmentationOutput segment(Tape& t, const PointFeatures& f,
                           ShapeEncoderParams& pp) {
  Tape::Id logits = affine(t, f.fused, pp.w_seg, pp.b_seg);
  const Matrix& z = t.value(logits);
  std::vector<int> labels(z.rows, 0);
  for (std::size_t i = 0; i < z.rows; ++i) {
    const double* row = z.row_ptr(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < z.cols; ++j)
      if (row[j] > row[best]) best = j;  // ties keep the lowest class id
    labels[i] = static_cast<int>(best);
  }
  return SegmentationOutput{logits, std::move(labels)};
}

PartPoolResult part_pool(Tape& t, Tape::Id features,
                         const std::vector<int>& assignment,
                         double min_fraction) {
  const Matrix& f = t.value(features);
  if (assignment.size() != f.rows)
    throw DimensionError("part_pool: " + std::to_string(assignment.size()) +
                         " labels for " + f.shape_str() + " features");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    by_class[assignment[i]].push_back(i);

  const double min_points =
      min_fraction * static_cast<double>(assignment.size());
  PartPoolResult out;
  RowGroups groups;
  for (const auto& [cls, rows] : by_class) {
    if (static_cast<double>(rows.size()) < min_points) continue;
    groups.push_back(rows);
    out.part_classes.push_back(cls);
    out.part_sizes.push_back(rows.size());
  }
  if (groups.empty()) {
    // Whole-shape fallback: one part averaging every point.
    out.whole_shape_fallback = true;
    out.part_classes = {-1};
    out.part_sizes = {assignment.size()};
    out.parts = t.pool_rows(features, PoolMode::Mean);
    return out;
  }
  out.parts = t.pool_rows(features, PoolMode::Mean, &groups);
  return out;
}

ShapeEncoding encode_shape(Tape& t, const ColoredPointCloud& cloud,
                           ShapeEncoderParams& p,
                           const ShapeEncoderConfig& cfg, PartSource source) {
  if (source == PartSource::GroundTruth && !cloud.has_labels())
    throw ConfigError("encode_shape: ground-truth parts requested but shape " +
                      cloud.shape_id + " is unlabeled");
  ShapeEncoding enc;
  enc.features = backbone_forward(t, cloud, p, cfg);
  enc.seg = segment(t, enc.features, p);
  const std::vector<int>& assignment =
      source == PartSource::GroundTruth ? cloud.labels : enc.seg.labels;
  enc.parts = part_pool(t, enc.features.fused, assignment,
                        cfg.min_part_fraction);
  return enc;
}

}  // namespace otmatch
