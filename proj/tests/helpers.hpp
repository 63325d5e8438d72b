#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "boxquery/acquisition.hpp"
#include "boxquery/clickcost.hpp"
#include "boxquery/core.hpp"
#include "boxquery/gridmaps.hpp"
#include "boxquery/segmentation.hpp"

namespace testutil {

using namespace boxquery;

/// Temporary directory, removed on scope exit.
class TmpDir {
 public:
  explicit TmpDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("boxquery_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TmpDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline ScalarMap random_map(Rng& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
  ScalarMap m(h, w);
  for (auto& v : m.values) v = static_cast<float>(rng.uniform(lo, hi));
  return m;
}

inline ProbMap random_probmap(Rng& rng, int h, int w, int c) {
  ProbMap p(h, w, c);
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      double sum = 0.0;
      std::vector<double> raw(static_cast<std::size_t>(c));
      for (auto& v : raw) {
        v = rng.uniform(1e-6, 1.0);
        sum += v;
      }
      for (int k = 0; k < c; ++k)
        p.at(r, col, k) = static_cast<float>(raw[static_cast<std::size_t>(k)] / sum);
    }
  }
  return p;
}

/// Naive prefix-sum table, the oracle for build_sat.
inline std::vector<std::vector<double>> naive_prefix(const ScalarMap& m) {
  std::vector<std::vector<double>> table(static_cast<std::size_t>(m.height + 1),
                                         std::vector<double>(static_cast<std::size_t>(m.width + 1), 0.0));
  for (int i = 1; i <= m.height; ++i)
    for (int j = 1; j <= m.width; ++j) {
      double s = 0.0;
      for (int r = 0; r < i; ++r)
        for (int c = 0; c < j; ++c) s += m.at(r, c);
      table[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = s;
    }
  return table;
}

/// Naive O(b^2) box sum, the oracle for box_sum / aggregate_boxes.
inline double naive_box_sum(const ScalarMap& m, int row, int col, int b) {
  double s = 0.0;
  for (int r = row; r < row + b; ++r)
    for (int c = col; c < col + b; ++c) s += m.at(r, c);
  return s;
}

inline ScalarMap naive_aggregate(const ScalarMap& m, int b, int stride) {
  const int ah = (m.height - b) / stride + 1;
  const int aw = (m.width - b) / stride + 1;
  ScalarMap out(ah, aw);
  for (int i = 0; i < ah; ++i)
    for (int j = 0; j < aw; ++j)
      out.at(i, j) = static_cast<float>(naive_box_sum(m, i * stride, j * stride, b) /
                                        (static_cast<double>(b) * b));
  return out;
}

/// O(n^2) reference for select_query: repeated scan for the best conflict-free
/// candidate with the documented tie order.
inline std::vector<CandidateBox> reference_select(std::vector<CandidateBox> candidates, int m_q) {
  std::vector<CandidateBox> selected;
  std::vector<bool> used(candidates.size(), false);
  while (static_cast<int>(selected.size()) < m_q) {
    int best = -1;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (used[i]) continue;
      bool conflict = false;
      for (const auto& s : selected)
        if (s.image_id == candidates[i].image_id &&
            boxes_overlap(s.region(), candidates[i].region()))
          conflict = true;
      if (conflict) {
        used[i] = true;
        continue;
      }
      if (best < 0) {
        best = static_cast<int>(i);
        continue;
      }
      const CandidateBox& a = candidates[i];
      const CandidateBox& b = candidates[static_cast<std::size_t>(best)];
      const auto key = [](const CandidateBox& c) {
        return std::make_tuple(-c.score, c.image_id, c.row, c.col);
      };
      if (key(a) < key(b)) best = static_cast<int>(i);
    }
    if (best < 0) break;
    used[static_cast<std::size_t>(best)] = true;
    selected.push_back(candidates[static_cast<std::size_t>(best)]);
  }
  return selected;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a);
  const std::vector<double> rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

/// Winding-number point-in-polygon, independent of the generator's even-odd
/// rasterizer.
inline bool winding_inside(const Vec2& p, const std::vector<Vec2>& ring) {
  int winding = 0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = ring[i];
    const Vec2& b = ring[(i + 1) % n];
    const double cross = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
    if (a.y <= p.y) {
      if (b.y > p.y && cross > 0) ++winding;
    } else {
      if (b.y <= p.y && cross < 0) --winding;
    }
  }
  return winding != 0;
}

/// Random convex polygon with a vertex-count range and a minimum edge length,
/// for the RDP fidelity benchmark. Rejection-samples inscribed-ellipse
/// polygons until the edge constraint holds.
inline std::vector<Vec2> random_convex_shape(Rng& rng, int vert_min, int vert_max,
                                             double min_edge, double cx, double cy,
                                             double max_radius) {
  for (;;) {
    const int k = static_cast<int>(rng.uniform_int(vert_min, vert_max));
    const double rx = rng.uniform(max_radius * 0.55, max_radius);
    const double ry = rng.uniform(max_radius * 0.55, max_radius);
    const double theta = rng.uniform(0.0, 6.283185307179586);
    std::vector<double> angles(static_cast<std::size_t>(k));
    for (auto& a : angles) a = rng.uniform(0.0, 6.283185307179586);
    std::sort(angles.begin(), angles.end());
    std::vector<Vec2> poly;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (double a : angles) {
      const double ex = rx * std::cos(a);
      const double ey = ry * std::sin(a);
      poly.push_back({cx + ex * ct - ey * st, cy + ex * st + ey * ct});
    }
    bool ok = true;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2& a = poly[i];
      const Vec2& b = poly[(i + 1) % poly.size()];
      if (std::hypot(a.x - b.x, a.y - b.y) < min_edge) ok = false;
    }
    if (ok) return poly;
  }
}

}  // namespace testutil
