#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "boxquery/segmentation.hpp"

namespace boxquery {

struct Vec2 {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

/// Ground-truth annotation polygon; the vertex ring is implicitly closed.
struct Polygon {
  std::string image_id;
  int cls = 0;
  std::vector<Vec2> vertices;
};

struct ClickCounts {
  std::int64_t c_p = 0;  // polygon clicks: vertices inside the box
  std::int64_t c_i = 0;  // intersection clicks: contour crossings of the box boundary
  std::int64_t c_b = 0;  // box clicks: 4 per box
  std::int64_t c_c = 0;  // class clicks: distinct ground-truth segments met

  ClickCounts& operator+=(const ClickCounts& o) {
    c_p += o.c_p;
    c_i += o.c_i;
    c_b += o.c_b;
    c_c += o.c_c;
    return *this;
  }
};

/// Accumulated annotation effort relative to labeling the full pool.
struct CostLedger {
  std::int64_t init_cp = 0;   // polygon clicks of the fully labeled initial images
  std::int64_t init_cc = 0;   // class clicks of the fully labeled initial images
  std::int64_t query_cp = 0;  // accumulated over queried boxes
  std::int64_t query_ci = 0;
  std::int64_t query_cb = 0;
  std::int64_t query_cc = 0;
  std::int64_t pool_cp = 0;  // dataset totals
  std::int64_t pool_cc = 0;
  std::int64_t labeled_pixels = 0;
  std::int64_t total_pixels = 0;
};

struct Costs {
  double cost_a = 0.0;  // percent
  double cost_b = 0.0;  // percent
  double cost_p = 0.0;  // percent
};

/// Click-based cost metrics, reported in percent; both click metrics can
/// exceed 100 (boxes pay intersection and repeated class clicks that whole
/// images do not).
inline Costs compute_costs(const CostLedger& l) {
  if (l.pool_cp <= 0 || l.pool_cp + l.pool_cc <= 0 || l.total_pixels <= 0)
    throw std::invalid_argument("compute_costs: pool totals must be positive");
  Costs c;
  c.cost_a = 100.0 *
             static_cast<double>(l.init_cp + l.init_cc + l.query_cp + l.query_ci + l.query_cc) /
             static_cast<double>(l.pool_cp + l.pool_cc);
  c.cost_b = 100.0 * static_cast<double>(l.init_cp + l.query_cp + l.query_ci + l.query_cb) /
             static_cast<double>(l.pool_cp);
  c.cost_p = 100.0 * static_cast<double>(l.labeled_pixels) / static_cast<double>(l.total_pixels);
  return c;
}

namespace detail {

inline double perp_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  if (len2 <= 0.0) return std::hypot(p.x - a.x, p.y - a.y);
  return std::abs(dx * (p.y - a.y) - dy * (p.x - a.x)) / std::sqrt(len2);
}

inline void rdp_open_rec(const std::vector<Vec2>& pts, std::size_t lo, std::size_t hi, double eps,
                         std::vector<std::uint8_t>& keep) {
  if (hi <= lo + 1) return;
  double max_d = -1.0;
  std::size_t max_i = lo;
  for (std::size_t i = lo + 1; i < hi; ++i) {
    const double d = perp_distance(pts[i], pts[lo], pts[hi]);
    if (d > max_d) {
      max_d = d;
      max_i = i;
    }
  }
  if (max_d > eps) {
    keep[max_i] = 1;
    rdp_open_rec(pts, lo, max_i, eps, keep);
    rdp_open_rec(pts, max_i, hi, eps, keep);
  }
}

inline std::vector<Vec2> rdp_open(const std::vector<Vec2>& pts, double eps) {
  std::vector<std::uint8_t> keep(pts.size(), 0);
  keep.front() = 1;
  keep.back() = 1;
  rdp_open_rec(pts, 0, pts.size() - 1, eps, keep);
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (keep[i]) out.push_back(pts[i]);
  return out;
}

/// Indices of the two mutually farthest ring points, via convex hull and
/// rotating calipers. Ties resolve to the lexicographically smallest index
/// pair (ring coordinates are integers, so distances compare exactly).
inline std::pair<std::size_t, std::size_t> farthest_pair(const std::vector<Vec2>& pts) {
  struct IndexedPoint {
    Vec2 p;
    std::size_t index;
  };
  std::vector<IndexedPoint> uniq;
  uniq.reserve(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) uniq.push_back({pts[i], i});
  std::sort(uniq.begin(), uniq.end(), [](const IndexedPoint& a, const IndexedPoint& b) {
    if (a.p.x != b.p.x) return a.p.x < b.p.x;
    if (a.p.y != b.p.y) return a.p.y < b.p.y;
    return a.index < b.index;
  });
  uniq.erase(std::unique(uniq.begin(), uniq.end(),
                         [](const IndexedPoint& a, const IndexedPoint& b) {
                           return a.p.x == b.p.x && a.p.y == b.p.y;
                         }),
             uniq.end());

  const auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  std::vector<IndexedPoint> hull;
  if (uniq.size() <= 2) {
    hull = uniq;
  } else {
    hull.resize(2 * uniq.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < uniq.size(); ++i) {
      while (k >= 2 && cross(hull[k - 2].p, hull[k - 1].p, uniq[i].p) <= 0) --k;
      hull[k++] = uniq[i];
    }
    const std::size_t lower = k + 1;
    for (std::size_t i = uniq.size() - 1; i-- > 0;) {
      while (k >= lower && cross(hull[k - 2].p, hull[k - 1].p, uniq[i].p) <= 0) --k;
      hull[k++] = uniq[i];
    }
    hull.resize(k - 1);
  }

  const auto dist2 = [](const Vec2& a, const Vec2& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return dx * dx + dy * dy;
  };
  double best = -1.0;
  std::pair<std::size_t, std::size_t> best_idx{0, 0};
  const auto consider = [&](const IndexedPoint& a, const IndexedPoint& b) {
    const double d = dist2(a.p, b.p);
    const std::pair<std::size_t, std::size_t> idx{std::min(a.index, b.index),
                                                  std::max(a.index, b.index)};
    if (d > best || (d == best && idx < best_idx)) {
      best = d;
      best_idx = idx;
    }
  };
  const std::size_t h = hull.size();
  if (h == 1) return {hull[0].index, hull[0].index};
  if (h == 2) {
    consider(hull[0], hull[1]);
    return best_idx;
  }
  const auto area2 = [&](std::size_t i, std::size_t j, std::size_t kk) {
    return std::abs(cross(hull[i].p, hull[j].p, hull[kk].p));
  };
  std::size_t j = 1;
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t next = (i + 1) % h;
    while (area2(i, next, (j + 1) % h) > area2(i, next, j)) j = (j + 1) % h;
    consider(hull[i], hull[j]);
    consider(hull[next], hull[j]);
  }
  return best_idx;
}

}  // namespace detail

/// Ramer-Douglas-Peucker simplification. Open polylines keep both endpoints
/// and split at the point of maximum perpendicular distance > epsilon. Closed
/// rings are cut at their two mutually farthest points; each half is
/// simplified as an open chain and the halves are merged back.
inline std::vector<Vec2> rdp(const std::vector<Vec2>& points, double epsilon, bool closed) {
  if (points.size() < 2) throw std::invalid_argument("rdp: needs at least 2 points");
  if (epsilon < 0.0) throw std::invalid_argument("rdp: epsilon must be >= 0");
  if (!closed) return detail::rdp_open(points, epsilon);
  if (points.size() == 2) return points;

  auto [i, j] = detail::farthest_pair(points);
  if (i == j) return {points[i]};  // all points coincide
  std::vector<Vec2> arc1(points.begin() + static_cast<std::ptrdiff_t>(i),
                         points.begin() + static_cast<std::ptrdiff_t>(j) + 1);
  std::vector<Vec2> arc2(points.begin() + static_cast<std::ptrdiff_t>(j), points.end());
  arc2.insert(arc2.end(), points.begin(), points.begin() + static_cast<std::ptrdiff_t>(i) + 1);

  std::vector<Vec2> out = detail::rdp_open(arc1, epsilon);
  const std::vector<Vec2> back = detail::rdp_open(arc2, epsilon);
  out.insert(out.end(), back.begin() + 1, back.end() - 1);
  return out;
}

namespace detail {

/// Closed-ring simplification over ring indices: split at the farthest pair,
/// then classic recursive RDP on each half in unwrapped index space.
inline std::vector<std::size_t> rdp_ring_indices(const std::vector<Vec2>& ring, double eps) {
  const std::size_t n = ring.size();
  const auto [i, j] = farthest_pair(ring);
  std::vector<std::uint8_t> keep(n, 0);
  keep[i] = 1;
  keep[j] = 1;
  const auto at = [&](std::size_t k) -> const Vec2& { return ring[k % n]; };
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  if (i != j) {
    stack.push_back({i, j});
    stack.push_back({j, i + n});
  }
  while (!stack.empty()) {
    const auto [lo, hi] = stack.back();
    stack.pop_back();
    if (hi <= lo + 1) continue;
    double max_d = -1.0;
    std::size_t max_k = lo;
    for (std::size_t k = lo + 1; k < hi; ++k) {
      const double d = perp_distance(at(k), at(lo), at(hi));
      if (d > max_d) {
        max_d = d;
        max_k = k;
      }
    }
    if (max_d > eps) {
      keep[max_k % n] = 1;
      stack.push_back({lo, max_k});
      stack.push_back({max_k, hi});
    }
  }
  std::vector<std::size_t> kept;
  for (std::size_t k = i; k < i + n; ++k)
    if (keep[k % n]) kept.push_back(k % n);
  return kept;
}

/// True when every ring point on the cyclic arc (from..to) lies within eps of
/// the chord between its endpoints.
inline bool arc_within(const std::vector<Vec2>& ring, std::size_t from, std::size_t to,
                       double eps) {
  const std::size_t n = ring.size();
  const Vec2& a = ring[from];
  const Vec2& b = ring[to];
  for (std::size_t k = (from + 1) % n; k != to; k = (k + 1) % n)
    if (perp_distance(ring[k], a, b) > eps) return false;
  return true;
}

}  // namespace detail

/// Simplified vertex estimate for one traced pixel ring. Rings long enough to
/// carry rasterization staircase get a cyclic 3-tap average first, so that
/// epsilon measures geometric deviation rather than pixel quantization noise.
/// The split-and-simplify pass is then refined: a vertex whose removal keeps
/// its whole arc within epsilon is dropped, and two close-by vertices that a
/// single arc point can replace within epsilon are merged (the farthest-pair
/// split endpoints otherwise survive as near-duplicates beside true corners).
inline std::vector<Vec2> simplify_contour(const std::vector<PixelCoord>& path, double epsilon) {
  std::vector<Vec2> ring;
  ring.reserve(path.size());
  for (const auto& p : path)
    ring.push_back({static_cast<double>(p.col), static_cast<double>(p.row)});
  if (ring.size() <= 3) return ring;
  if (ring.size() >= 8) {
    std::vector<Vec2> smoothed(ring.size());
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& a = ring[(i + n - 1) % n];
      const Vec2& b = ring[i];
      const Vec2& c = ring[(i + 1) % n];
      smoothed[i] = {(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0};
    }
    ring = std::move(smoothed);
  }

  std::vector<std::size_t> kept = detail::rdp_ring_indices(ring, epsilon);
  bool changed = true;
  while (changed && kept.size() > 3) {
    changed = false;
    const std::size_t m = kept.size();
    // decimation: drop a vertex when its arc fits the neighbor chord
    for (std::size_t a = 0; a < m; ++a) {
      const std::size_t prev = kept[(a + m - 1) % m];
      const std::size_t next = kept[(a + 1) % m];
      if (detail::arc_within(ring, prev, next, epsilon)) {
        kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(a));
        changed = true;
        break;
      }
    }
    if (changed) continue;
    // merge: a rasterized corner rounds over more than epsilon, so an
    // epsilon-faithful pass keeps several points where an annotator clicks
    // once. Collapse two adjacent vertices onto the arc point minimizing the
    // worst deviation of the two resulting arcs. The acceptance tolerance is
    // a constant in pixels (rounding is a raster artifact, independent of
    // epsilon); corners joined by edges beyond the rounding scale never
    // merge, since no single point can absorb them within it.
    const double rounding_tol = std::max(2.0, epsilon);
    const std::size_t n = ring.size();
    for (std::size_t a = 0; a < m; ++a) {
      const std::size_t u = kept[a];
      const std::size_t v = kept[(a + 1) % m];
      const std::size_t prev = kept[(a + m - 1) % m];
      const std::size_t next = kept[(a + 2) % m];
      if (prev == v || next == u) continue;
      const auto arc_worst = [&](std::size_t from, std::size_t to) {
        double worst = 0.0;
        for (std::size_t k = (from + 1) % n; k != to; k = (k + 1) % n)
          worst = std::max(worst, detail::perp_distance(ring[k], ring[from], ring[to]));
        return worst;
      };
      double best_score = std::numeric_limits<double>::infinity();
      std::size_t best_k = u;
      for (std::size_t k = u;; k = (k + 1) % n) {
        const double score = std::max(arc_worst(prev, k), arc_worst(k, next));
        if (score < best_score) {
          best_score = score;
          best_k = k;
        }
        if (k == v) break;
      }
      if (best_score <= rounding_tol) {
        std::vector<std::size_t> trial;
        for (std::size_t b = 0; b < m; ++b) {
          if (b == a)
            trial.push_back(best_k);
          else if (b != (a + 1) % m)
            trial.push_back(kept[b]);
        }
        kept = std::move(trial);
        changed = true;
        break;
      }
    }
  }

  std::vector<Vec2> out;
  out.reserve(kept.size());
  for (std::size_t k : kept) out.push_back(ring[k]);
  return out;
}

/// Estimated-click cost map kappa: 1 at every pixel holding a simplified
/// outer-contour vertex of some predicted segment, 0 elsewhere. Only outer
/// contours count: a boundary around an enclosed segment is already charged
/// by that segment's own contour, and each boundary is clicked once.
inline ScalarMap click_cost_map(const SegMask& mask, double epsilon) {
  ScalarMap kappa(mask.height, mask.width, 0.0f);
  const auto mark = [&](int r, int c) {
    kappa.at(std::clamp(r, 0, kappa.height - 1), std::clamp(c, 0, kappa.width - 1)) = 1.0f;
  };
  for (const auto& seg : connected_components(mask)) {
    const ContourSet contours = trace_contours(seg, mask);
    for (const auto& v : simplify_contour(contours.paths.front(), epsilon))
      mark(static_cast<int>(std::lround(v.y)), static_cast<int>(std::lround(v.x)));
  }
  return kappa;
}

/// Priority via estimated clicks: g2 = 1 - kappa, high where annotation is
/// estimated to be cheap.
inline ScalarMap click_priority(const SegMask& mask, double epsilon) {
  ScalarMap g2 = click_cost_map(mask, epsilon);
  for (auto& v : g2.values) v = 1.0f - v;
  return g2;
}

/// Number of estimated vertices inside a box: sum of kappa over the box.
inline std::int64_t estimate_box_clicks(const ScalarMap& kappa, const BoxRegion& box) {
  if (box.row < 0 || box.col < 0 || box.row + box.width > kappa.height ||
      box.col + box.width > kappa.width)
    throw std::invalid_argument("estimate_box_clicks: box outside map");
  double sum = 0.0;
  for (int r = box.row; r < box.row + box.width; ++r)
    for (int c = box.col; c < box.col + box.width; ++c) sum += kappa.at(r, c);
  return std::llround(sum);
}

/// True-click cost map from ground-truth polygon vertices (the oracle-cost
/// analogue of click_cost_map).
inline ScalarMap vertex_cost_map(const std::vector<Polygon>& polygons, int height, int width) {
  ScalarMap kappa(height, width, 0.0f);
  for (const auto& poly : polygons) {
    for (const auto& v : poly.vertices) {
      const int r = std::clamp(static_cast<int>(std::lround(v.y)), 0, height - 1);
      const int c = std::clamp(static_cast<int>(std::lround(v.x)), 0, width - 1);
      kappa.at(r, c) = 1.0f;
    }
  }
  return kappa;
}

namespace detail {

/// Geometric extent of a pixel box: the area covered by its pixels, with
/// pixel centers at integer coordinates. Points exactly on the boundary count
/// as inside.
struct BoxExtent {
  double xmin, xmax, ymin, ymax;

  explicit BoxExtent(const BoxRegion& b)
      : xmin(b.col - 0.5),
        xmax(b.col + b.width - 0.5),
        ymin(b.row - 0.5),
        ymax(b.row + b.width - 0.5) {}

  bool contains(const Vec2& p) const {
    return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax;
  }
};

/// Liang-Barsky clip of segment a + t*(b-a), t in [0,1], against the closed
/// box. Returns false when the segment misses the box entirely.
inline bool clip_segment(const Vec2& a, const Vec2& b, const BoxExtent& box, double& t0,
                         double& t1) {
  t0 = 0.0;
  t1 = 1.0;
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - box.xmin, box.xmax - a.x, a.y - box.ymin, box.ymax - a.y};
  for (int k = 0; k < 4; ++k) {
    if (p[k] == 0.0) {
      if (q[k] < 0.0) return false;
      continue;
    }
    const double t = q[k] / p[k];
    if (p[k] < 0.0) {
      if (t > t1) return false;
      t0 = std::max(t0, t);
    } else {
      if (t < t0) return false;
      t1 = std::min(t1, t);
    }
  }
  return t0 <= t1;
}

inline Vec2 lerp(const Vec2& a, const Vec2& b, double t) {
  return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
}

inline bool nearly_equal(const Vec2& a, const Vec2& b) {
  return std::abs(a.x - b.x) < 1e-9 && std::abs(a.y - b.y) < 1e-9;
}

}  // namespace detail

/// True clicks for annotating one queried box against ground truth:
///   c_p  vertices inside the box (boundary-inclusive),
///   c_i  transversal crossings of polygon edges with the box boundary; a
///        crossing exactly at an inside-counted vertex is not double-counted,
///        and an edge passing through a corner crosses once,
///   c_b  4, the box itself,
///   c_c  distinct ground-truth segments intersecting the box.
/// `already_labeled`, when given, drops clicks whose location falls on
/// previously labeled pixels (re-annotation is free), and restricts c_c to
/// the newly labeled area.
inline ClickCounts count_true_clicks(const BoxRegion& box, const std::vector<Polygon>& polygons,
                                     const SegMask& gt, const ComponentLabels& gt_labels,
                                     const BitMask* already_labeled = nullptr) {
  const detail::BoxExtent extent(box);
  ClickCounts counts;
  counts.c_b = 4;

  const auto pixel_of = [&](const Vec2& p) {
    const int r = std::clamp(static_cast<int>(std::lround(p.y)), 0, gt.height - 1);
    const int c = std::clamp(static_cast<int>(std::lround(p.x)), 0, gt.width - 1);
    return PixelCoord{r, c};
  };
  const auto is_free = [&](const Vec2& p) {
    if (!already_labeled) return false;
    const PixelCoord px = pixel_of(p);
    return already_labeled->get(px.row, px.col);
  };

  for (const auto& poly : polygons) {
    const std::size_t n = poly.vertices.size();
    std::vector<bool> inside(n);
    for (std::size_t i = 0; i < n; ++i) {
      inside[i] = extent.contains(poly.vertices[i]);
      if (inside[i] && !is_free(poly.vertices[i])) ++counts.c_p;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + 1) % n;
      const Vec2& a = poly.vertices[i];
      const Vec2& b = poly.vertices[j];
      if (inside[i] && inside[j]) continue;
      double t0, t1;
      if (!detail::clip_segment(a, b, extent, t0, t1)) continue;
      if (inside[i] != inside[j]) {
        const Vec2 pt = detail::lerp(a, b, inside[i] ? t1 : t0);
        const Vec2& in_end = inside[i] ? a : b;
        if (detail::nearly_equal(pt, in_end)) continue;  // vertex on the boundary, already c_p
        if (!is_free(pt)) ++counts.c_i;
      } else {
        // Both endpoints outside: two crossings when the open segment passes
        // through the box interior, none for a tangential graze.
        const Vec2 mid = detail::lerp(a, b, (t0 + t1) / 2.0);
        const bool through = mid.x > extent.xmin && mid.x < extent.xmax && mid.y > extent.ymin &&
                             mid.y < extent.ymax;
        if (!through) continue;
        if (!is_free(detail::lerp(a, b, t0))) ++counts.c_i;
        if (!is_free(detail::lerp(a, b, t1))) ++counts.c_i;
      }
    }
  }

  std::vector<std::int32_t> seen;
  for (int r = box.row; r < box.row + box.width; ++r) {
    for (int c = box.col; c < box.col + box.width; ++c) {
      if (r < 0 || c < 0 || r >= gt.height || c >= gt.width) continue;
      if (gt.at(r, c) == gt.ignore_id) continue;
      if (already_labeled && already_labeled->get(r, c)) continue;
      const std::int32_t label = gt_labels.at(r, c);
      if (std::find(seen.begin(), seen.end(), label) == seen.end()) seen.push_back(label);
    }
  }
  counts.c_c = static_cast<std::int64_t>(seen.size());
  return counts;
}

inline ClickCounts count_true_clicks(const BoxRegion& box, const std::vector<Polygon>& polygons,
                                     const SegMask& gt) {
  return count_true_clicks(box, polygons, gt, label_components(gt));
}

}  // namespace boxquery
