#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "boxquery/gridmaps.hpp"

namespace boxquery {

inline constexpr std::uint16_t kIgnoreId = 0xffff;

/// Argmax segmentation mask. Pixels may carry the ignore id where no label
/// exists (ground-truth masks); predicted masks never do.
struct SegMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> ids;
  std::uint16_t ignore_id = kIgnoreId;

  SegMask() = default;
  SegMask(int h, int w, std::uint16_t fill = 0)
      : height(h), width(w), ids(static_cast<std::size_t>(h) * w, fill) {}

  std::uint16_t& at(int r, int c) { return ids[static_cast<std::size_t>(r) * width + c]; }
  std::uint16_t at(int r, int c) const { return ids[static_cast<std::size_t>(r) * width + c]; }
};

struct PixelRun {
  int row = 0;
  int col_begin = 0;
  int col_end = 0;  // exclusive
};

/// A maximal 8-connected same-class component of a mask.
struct Segment {
  int id = 0;
  std::uint16_t cls = 0;
  std::vector<PixelRun> runs;  // sorted by (row, col)
  std::int64_t pixel_count = 0;     // S
  std::int64_t boundary_count = 0;  // S_bd: pixels with a 4-neighbor outside the segment
  BoxRegion bbox;                   // width field unused; see bbox_h/bbox_w
  int bbox_h = 0;
  int bbox_w = 0;

  template <typename Fn>
  void for_each_pixel(Fn&& fn) const {
    for (const auto& run : runs)
      for (int c = run.col_begin; c < run.col_end; ++c) fn(run.row, c);
  }
};

struct PixelCoord {
  int row = 0;
  int col = 0;
  bool operator==(const PixelCoord&) const = default;
};

/// Closed pixel paths on a segment's boundary: outer contour first, then one
/// path per enclosed hole. Paths do not repeat the start pixel at the end.
struct ContourSet {
  std::vector<std::vector<PixelCoord>> paths;
};

/// Per-pixel argmax over the class axis; ties go to the lowest class index.
inline SegMask argmax_mask(const ProbMap& p) {
  SegMask mask(p.height, p.width);
  for (int r = 0; r < p.height; ++r) {
    for (int c = 0; c < p.width; ++c) {
      const float* px = p.pixel(r, c);
      int best = 0;
      float best_v = px[0];
      for (int k = 1; k < p.classes; ++k) {
        if (px[k] > best_v) {
          best_v = px[k];
          best = k;
        }
      }
      mask.at(r, c) = static_cast<std::uint16_t>(best);
    }
  }
  return mask;
}

/// Component labels for every non-ignore pixel (8-connectivity, same class);
/// label values are dense, assigned in raster order of each component's first
/// pixel. Ignore pixels get label -1.
struct ComponentLabels {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> labels;
  int count = 0;

  std::int32_t at(int r, int c) const { return labels[static_cast<std::size_t>(r) * width + c]; }
};

inline ComponentLabels label_components(const SegMask& mask) {
  ComponentLabels out;
  out.height = mask.height;
  out.width = mask.width;
  out.labels.assign(static_cast<std::size_t>(mask.height) * mask.width, -1);
  std::vector<PixelCoord> stack;
  static constexpr int dr[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
  static constexpr int dc[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * mask.width + c;
      if (out.labels[idx] != -1 || mask.ids[idx] == mask.ignore_id) continue;
      const std::uint16_t cls = mask.ids[idx];
      const std::int32_t label = out.count++;
      out.labels[idx] = label;
      stack.push_back({r, c});
      while (!stack.empty()) {
        const PixelCoord p = stack.back();
        stack.pop_back();
        for (int k = 0; k < 8; ++k) {
          const int nr = p.row + dr[k];
          const int nc = p.col + dc[k];
          if (nr < 0 || nc < 0 || nr >= mask.height || nc >= mask.width) continue;
          const std::size_t nidx = static_cast<std::size_t>(nr) * mask.width + nc;
          if (out.labels[nidx] != -1 || mask.ids[nidx] != cls) continue;
          out.labels[nidx] = label;
          stack.push_back({nr, nc});
        }
      }
    }
  }
  return out;
}

/// Partition of non-ignore pixels into maximal 8-connected same-class
/// segments, ids in raster order of each segment's first pixel.
inline std::vector<Segment> connected_components(const SegMask& mask) {
  const ComponentLabels labels = label_components(mask);
  std::vector<Segment> segments(static_cast<std::size_t>(labels.count));
  for (int i = 0; i < labels.count; ++i) {
    segments[static_cast<std::size_t>(i)].id = i;
    segments[static_cast<std::size_t>(i)].bbox = {mask.height, mask.width, 0};
  }
  // Build runs in raster order.
  for (int r = 0; r < mask.height; ++r) {
    int c = 0;
    while (c < mask.width) {
      const std::int32_t label = labels.at(r, c);
      if (label < 0) {
        ++c;
        continue;
      }
      int end = c + 1;
      while (end < mask.width && labels.at(r, end) == label) ++end;
      Segment& seg = segments[static_cast<std::size_t>(label)];
      seg.cls = mask.at(r, c);
      seg.runs.push_back({r, c, end});
      seg.pixel_count += end - c;
      seg.bbox.row = std::min(seg.bbox.row, r);
      seg.bbox.col = std::min(seg.bbox.col, c);
      seg.bbox_h = std::max(seg.bbox_h, r + 1);
      seg.bbox_w = std::max(seg.bbox_w, end);
      c = end;
    }
  }
  for (auto& seg : segments) {
    seg.bbox_h -= seg.bbox.row;
    seg.bbox_w -= seg.bbox.col;
  }
  // Boundary pixels: any 4-neighbor outside the image or in another label.
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      const std::int32_t label = labels.at(r, c);
      if (label < 0) continue;
      const bool boundary =
          r == 0 || labels.at(r - 1, c) != label || r == mask.height - 1 ||
          labels.at(r + 1, c) != label || c == 0 || labels.at(r, c - 1) != label ||
          c == mask.width - 1 || labels.at(r, c + 1) != label;
      if (boundary) ++segments[static_cast<std::size_t>(label)].boundary_count;
    }
  }
  return segments;
}

namespace detail {

/// Membership grid for one segment over its padded bounding box.
struct SegmentGrid {
  int row0 = 0, col0 = 0;  // grid (1,1) maps to image (row0, col0)
  int h = 0, w = 0;        // padded dims (bbox + 2)
  std::vector<std::uint8_t> inside;

  bool at(int r, int c) const {
    if (r < 0 || c < 0 || r >= h || c >= w) return false;
    return inside[static_cast<std::size_t>(r) * w + c] != 0;
  }
};

inline SegmentGrid make_segment_grid(const Segment& seg) {
  SegmentGrid g;
  g.row0 = seg.bbox.row - 1;
  g.col0 = seg.bbox.col - 1;
  g.h = seg.bbox_h + 2;
  g.w = seg.bbox_w + 2;
  g.inside.assign(static_cast<std::size_t>(g.h) * g.w, 0);
  seg.for_each_pixel([&](int r, int c) {
    g.inside[static_cast<std::size_t>(r - g.row0) * g.w + (c - g.col0)] = 1;
  });
  return g;
}

// Moore neighborhood in clockwise screen order starting west.
inline constexpr int kMooreDr[8] = {0, -1, -1, -1, 0, 1, 1, 1};
inline constexpr int kMooreDc[8] = {-1, -1, 0, 1, 1, 1, 0, -1};

inline int moore_dir(PixelCoord from, PixelCoord to) {
  for (int k = 0; k < 8; ++k)
    if (from.row + kMooreDr[k] == to.row && from.col + kMooreDc[k] == to.col) return k;
  throw std::logic_error("moore_dir: pixels not adjacent");
}

/// Moore-neighbor boundary walk. `start` is a segment pixel, `backtrack` an
/// adjacent background pixel. The walk state is (pixel, backtrack direction);
/// the map on states is deterministic, so the walk stops as soon as a state
/// recurs, which closes the full boundary cycle.
inline std::vector<PixelCoord> moore_trace(const SegmentGrid& g, PixelCoord start,
                                           PixelCoord backtrack) {
  std::vector<PixelCoord> path;
  path.push_back(start);
  std::vector<std::uint8_t> seen(g.inside.size(), 0);
  const auto mark = [&](PixelCoord p, int bdir) {
    std::uint8_t& flags = seen[static_cast<std::size_t>(p.row) * g.w + p.col];
    const std::uint8_t bit = static_cast<std::uint8_t>(1u << bdir);
    const bool was = (flags & bit) != 0;
    flags |= bit;
    return was;
  };
  PixelCoord cur = start;
  PixelCoord back = backtrack;
  mark(cur, moore_dir(cur, back));
  const std::size_t cap = 8 * g.inside.size() + 16;
  for (std::size_t step = 0; step < cap; ++step) {
    const int bdir = moore_dir(cur, back);
    PixelCoord next{};
    PixelCoord new_back = back;
    bool found = false;
    for (int k = 1; k <= 8; ++k) {
      const int idx = (bdir + k) & 7;
      const PixelCoord cand{cur.row + kMooreDr[idx], cur.col + kMooreDc[idx]};
      if (g.at(cand.row, cand.col)) {
        next = cand;
        const int prev = (bdir + k - 1) & 7;
        new_back = {cur.row + kMooreDr[prev], cur.col + kMooreDc[prev]};
        found = true;
        break;
      }
    }
    if (!found) return path;  // isolated pixel
    cur = next;
    back = new_back;
    if (mark(cur, moore_dir(cur, back))) return path;
    path.push_back(cur);
  }
  throw std::logic_error("moore_trace: walk failed to close");
}

}  // namespace detail

/// Outer contour (Moore boundary trace) plus one inner contour per enclosed
/// hole (4-connected background regions not reaching the segment's padded
/// frame). Hole walls adjacent to more than one background region can appear
/// on more than one path; segments of practical masks have each boundary
/// pixel on exactly one path.
inline ContourSet trace_contours(const Segment& seg, const SegMask& mask) {
  (void)mask;
  ContourSet out;
  const detail::SegmentGrid g = detail::make_segment_grid(seg);
  const auto to_image = [&](std::vector<PixelCoord> path) {
    for (auto& p : path) {
      p.row += g.row0;
      p.col += g.col0;
    }
    return path;
  };

  // Outer contour starts at the raster-first pixel; its west neighbor is
  // guaranteed background.
  const PixelCoord start{seg.runs.front().row - g.row0, seg.runs.front().col_begin - g.col0};
  out.paths.push_back(to_image(detail::moore_trace(g, start, {start.row, start.col - 1})));

  if (seg.pixel_count < 4) return out;  // too small to enclose anything

  // Flood the background from the padded frame (4-connectivity); what remains
  // unreached are holes.
  std::vector<std::int32_t> bg(g.inside.size(), -1);  // -1 unvisited, 0 outer, >0 hole id
  std::vector<PixelCoord> stack;
  const auto bg_at = [&](int r, int c) -> std::int32_t& {
    return bg[static_cast<std::size_t>(r) * g.w + c];
  };
  const auto flood = [&](PixelCoord seed, std::int32_t tag) {
    bg_at(seed.row, seed.col) = tag;
    stack.push_back(seed);
    while (!stack.empty()) {
      const PixelCoord p = stack.back();
      stack.pop_back();
      static constexpr int dr[4] = {-1, 1, 0, 0};
      static constexpr int dc[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int nr = p.row + dr[k];
        const int nc = p.col + dc[k];
        if (nr < 0 || nc < 0 || nr >= g.h || nc >= g.w) continue;
        if (g.at(nr, nc) || bg_at(nr, nc) != -1) continue;
        bg_at(nr, nc) = tag;
        stack.push_back({nr, nc});
      }
    }
  };
  flood({0, 0}, 0);
  for (int c = 0; c < g.w; ++c) {
    if (!g.at(0, c) && bg_at(0, c) == -1) flood({0, c}, 0);
    if (!g.at(g.h - 1, c) && bg_at(g.h - 1, c) == -1) flood({g.h - 1, c}, 0);
  }
  for (int r = 0; r < g.h; ++r) {
    if (!g.at(r, 0) && bg_at(r, 0) == -1) flood({r, 0}, 0);
    if (!g.at(r, g.w - 1) && bg_at(r, g.w - 1) == -1) flood({r, g.w - 1}, 0);
  }
  std::int32_t next_hole = 1;
  for (int r = 0; r < g.h; ++r) {
    for (int c = 0; c < g.w; ++c) {
      if (g.at(r, c) || bg_at(r, c) != -1) continue;
      flood({r, c}, next_hole);
      // Inner contour: start from the wall pixel above the hole's raster-first
      // pixel, backtracking into the hole.
      const PixelCoord wall{r - 1, c};
      out.paths.push_back(to_image(detail::moore_trace(g, wall, {r, c})));
      ++next_hole;
    }
  }
  return out;
}

/// Segment-wise IoU against ground truth: intersection with the ground-truth
/// pixels of the segment's class, over the union with the ground-truth
/// components of that class that touch the segment. Pixels with ignore-id
/// ground truth are excluded on both sides.
inline std::vector<double> compute_targets(const std::vector<Segment>& segments,
                                           const SegMask& gt) {
  if (segments.empty()) return {};
  for (const auto& seg : segments)
    if (seg.bbox.row + seg.bbox_h > gt.height || seg.bbox.col + seg.bbox_w > gt.width)
      throw std::invalid_argument("compute_targets: segment outside ground-truth mask");
  const ComponentLabels gt_labels = label_components(gt);
  std::vector<std::int64_t> comp_size(static_cast<std::size_t>(gt_labels.count), 0);
  for (auto l : gt_labels.labels)
    if (l >= 0) ++comp_size[static_cast<std::size_t>(l)];

  std::vector<double> out;
  out.reserve(segments.size());
  std::vector<std::int64_t> stamp(static_cast<std::size_t>(gt_labels.count), -1);
  std::int64_t current = 0;
  for (const auto& seg : segments) {
    if (seg.runs.empty()) {
      out.push_back(0.0);
      continue;
    }
    std::int64_t inter = 0;
    std::int64_t seg_valid = 0;
    std::vector<std::int32_t> touched;
    seg.for_each_pixel([&](int r, int c) {
      const std::uint16_t g = gt.at(r, c);
      if (g == gt.ignore_id) return;
      ++seg_valid;
      if (g == seg.cls) {
        ++inter;
        const std::int32_t l = gt_labels.at(r, c);
        if (stamp[static_cast<std::size_t>(l)] != current) {
          stamp[static_cast<std::size_t>(l)] = current;
          touched.push_back(l);
        }
      }
    });
    std::int64_t gt_union = 0;
    for (auto l : touched) gt_union += comp_size[static_cast<std::size_t>(l)];
    const std::int64_t uni = seg_valid + gt_union - inter;
    out.push_back(uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0);
    ++current;
  }
  return out;
}

inline double segment_iou(const Segment& seg, const SegMask& gt) {
  return compute_targets({seg}, gt).front();
}

/// Dataset-level mIoU: accumulate per-class intersection/union over images,
/// then average I_c/U_c over classes with U_c > 0. Ignore-id ground-truth
/// pixels are excluded entirely.
struct IouAccumulator {
  std::vector<std::int64_t> inter;
  std::vector<std::int64_t> uni;

  void add(const SegMask& pred, const SegMask& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
      throw std::invalid_argument("IouAccumulator: dimension mismatch");
    const std::size_t n = pred.ids.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint16_t g = gt.ids[i];
      if (g == gt.ignore_id) continue;
      const std::uint16_t p = pred.ids[i];
      const std::size_t need = static_cast<std::size_t>(std::max(g, p)) + 1;
      if (need > uni.size()) {
        uni.resize(need, 0);
        inter.resize(need, 0);
      }
      if (p == g) {
        ++inter[g];
        ++uni[g];
      } else {
        ++uni[g];
        ++uni[p];
      }
    }
  }

  double mean_iou() const {
    double sum = 0.0;
    int classes = 0;
    for (std::size_t k = 0; k < uni.size(); ++k) {
      if (uni[k] == 0) continue;
      sum += static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
      ++classes;
    }
    return classes > 0 ? sum / classes : 0.0;
  }
};

inline double mean_iou(const SegMask& pred, const SegMask& gt) {
  IouAccumulator acc;
  acc.add(pred, gt);
  return acc.mean_iou();
}

}  // namespace boxquery
