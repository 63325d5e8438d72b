#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "boxquery/core.hpp"

namespace boxquery {

/// Per-pixel class probability tensor, row-major (row, col, class).
struct ProbMap {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<float> values;

  ProbMap() = default;
  ProbMap(int h, int w, int c)
      : height(h), width(w), classes(c), values(static_cast<std::size_t>(h) * w * c, 0.0f) {}

  float& at(int r, int c, int k) {
    return values[(static_cast<std::size_t>(r) * width + c) * classes + k];
  }
  float at(int r, int c, int k) const {
    return values[(static_cast<std::size_t>(r) * width + c) * classes + k];
  }
  const float* pixel(int r, int c) const {
    return values.data() + (static_cast<std::size_t>(r) * width + c) * classes;
  }
};

/// Dense per-pixel score map.
struct ScalarMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  ScalarMap() = default;
  ScalarMap(int h, int w, float fill = 0.0f)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
  std::size_t size() const { return values.size(); }
};

/// Per-pixel labeled flag, true = pixel already annotated.
struct BitMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BitMask() = default;
  BitMask(int h, int w, bool fill = false)
      : height(h), width(w), bits(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}

  bool get(int r, int c) const { return bits[static_cast<std::size_t>(r) * width + c] != 0; }
  void set(int r, int c, bool v) { bits[static_cast<std::size_t>(r) * width + c] = v ? 1 : 0; }
  std::int64_t count_set() const {
    std::int64_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
};

/// Square query region: rows [row, row+width), cols [col, col+width).
struct BoxRegion {
  int row = 0;
  int col = 0;
  int width = 0;
};

inline bool boxes_overlap(const BoxRegion& a, const BoxRegion& b) {
  return a.row < b.row + b.width && b.row < a.row + a.width && a.col < b.col + b.width &&
         b.col < a.col + a.width;
}

/// Summed-area table with one padding row/column of zeros; entry (i, j) is the
/// sum of the source over rows < i, cols < j. Accumulated in doubles.
struct SummedAreaTable {
  int height = 0;  // source dims
  int width = 0;
  std::vector<double> sums;  // (height+1) x (width+1)

  double entry(int i, int j) const { return sums[static_cast<std::size_t>(i) * (width + 1) + j]; }
};

inline SummedAreaTable build_sat(const ScalarMap& m) {
  SummedAreaTable sat;
  sat.height = m.height;
  sat.width = m.width;
  sat.sums.assign(static_cast<std::size_t>(m.height + 1) * (m.width + 1), 0.0);
  const int stride = m.width + 1;
  for (int r = 0; r < m.height; ++r) {
    double row_sum = 0.0;
    const double* above = sat.sums.data() + static_cast<std::size_t>(r) * stride;
    double* cur = sat.sums.data() + static_cast<std::size_t>(r + 1) * stride;
    for (int c = 0; c < m.width; ++c) {
      row_sum += m.at(r, c);
      cur[c + 1] = above[c + 1] + row_sum;
    }
  }
  return sat;
}

/// Sum of the source map over a b x b box anchored at (row, col), via
/// four-corner inclusion-exclusion.
inline double box_sum(const SummedAreaTable& sat, int row, int col, int b) {
  if (row < 0 || col < 0 || b < 1 || row + b > sat.height || col + b > sat.width)
    throw std::invalid_argument("box_sum: box outside map bounds");
  return sat.entry(row + b, col + b) - sat.entry(row, col + b) - sat.entry(row + b, col) +
         sat.entry(row, col);
}

/// Pixel-wise Shannon entropy of the class distribution, normalized by ln(c)
/// so scores lie in [0, 1]. Zero probabilities contribute nothing.
inline ScalarMap entropy_map(const ProbMap& p) {
  if (p.classes < 2) throw std::invalid_argument("entropy_map: needs at least 2 classes");
  ScalarMap out(p.height, p.width);
  const double norm = 1.0 / std::log(static_cast<double>(p.classes));
  for (int r = 0; r < p.height; ++r) {
    for (int c = 0; c < p.width; ++c) {
      const float* px = p.pixel(r, c);
      double h = 0.0;
      for (int k = 0; k < p.classes; ++k) {
        const double v = px[k];
        if (v > 0.0) h -= v * std::log(v);
      }
      out.at(r, c) = static_cast<float>(clamp01(h * norm));
    }
  }
  return out;
}

/// Zero out scores of already-labeled pixels.
inline ScalarMap mask_labeled(const ScalarMap& m, const BitMask& labeled) {
  if (m.height != labeled.height || m.width != labeled.width)
    throw std::invalid_argument("mask_labeled: dimension mismatch");
  ScalarMap out = m;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    if (labeled.bits[i]) out.values[i] = 0.0f;
  return out;
}

/// Box-aggregated priority map: mean score of every b x b box whose top-left
/// anchor lies on the stride grid. Output dims are the anchor grid,
/// ((H-b)/stride+1) x ((W-b)/stride+1). Means (sum / b^2) keep scores in
/// [0, 1] and are rank-equivalent to raw sums for a fixed b.
inline ScalarMap aggregate_boxes(const ScalarMap& m, int b, int stride) {
  if (b < 1 || b > m.height || b > m.width)
    throw std::invalid_argument("aggregate_boxes: box width exceeds map");
  if (stride < 1) throw std::invalid_argument("aggregate_boxes: stride must be >= 1");
  const SummedAreaTable sat = build_sat(m);
  const int ah = (m.height - b) / stride + 1;
  const int aw = (m.width - b) / stride + 1;
  ScalarMap out(ah, aw);
  const double inv_area = 1.0 / (static_cast<double>(b) * b);
  for (int i = 0; i < ah; ++i)
    for (int j = 0; j < aw; ++j)
      out.at(i, j) = static_cast<float>(box_sum(sat, i * stride, j * stride, b) * inv_area);
  return out;
}

}  // namespace boxquery
