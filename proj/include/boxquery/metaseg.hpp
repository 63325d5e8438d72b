#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "boxquery/segmentation.hpp"

namespace boxquery {

/// Hand-crafted per-segment metrics fed to the IoU regressor: mean dispersion
/// (entropy, softmax margin), size and boundary-ratio shape quantities,
/// normalized center of mass, and mean class probabilities.
struct SegmentFeatures {
  double mean_entropy = 0.0;
  double mean_margin = 0.0;
  double size = 0.0;           // S
  double boundary_size = 0.0;  // S_bd
  double interior_size = 0.0;  // S_in = S - S_bd
  double ratio_bd = 0.0;       // S / S_bd
  double ratio_in = 0.0;       // S_in / S_bd
  double com_row = 0.0;
  double com_col = 0.0;
  std::vector<double> mean_probs;

  std::vector<double> to_vector() const {
    std::vector<double> v{mean_entropy, mean_margin, size,    boundary_size,
                          interior_size, ratio_bd,    ratio_in, com_row,
                          com_col};
    v.insert(v.end(), mean_probs.begin(), mean_probs.end());
    return v;
  }
};

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
};

inline FeatureMatrix features_matrix(const std::vector<SegmentFeatures>& feats) {
  FeatureMatrix m;
  m.rows = feats.size();
  m.cols = feats.empty() ? 0 : feats.front().to_vector().size();
  m.data.reserve(m.rows * m.cols);
  for (const auto& f : feats) {
    const auto v = f.to_vector();
    m.data.insert(m.data.end(), v.begin(), v.end());
  }
  return m;
}

/// One feature record per segment, in input order.
inline std::vector<SegmentFeatures> extract_features(const ProbMap& p,
                                                     const std::vector<Segment>& segments) {
  std::vector<SegmentFeatures> out;
  out.reserve(segments.size());
  const double entropy_norm = 1.0 / std::log(static_cast<double>(p.classes));
  for (const auto& seg : segments) {
    SegmentFeatures f;
    f.mean_probs.assign(static_cast<std::size_t>(p.classes), 0.0);
    double sum_entropy = 0.0, sum_margin = 0.0, sum_row = 0.0, sum_col = 0.0;
    seg.for_each_pixel([&](int r, int c) {
      const float* px = p.pixel(r, c);
      double h = 0.0;
      double p1 = 0.0, p2 = 0.0;
      for (int k = 0; k < p.classes; ++k) {
        const double v = px[k];
        if (v > 0.0) h -= v * std::log(v);
        if (v > p1) {
          p2 = p1;
          p1 = v;
        } else if (v > p2) {
          p2 = v;
        }
        f.mean_probs[static_cast<std::size_t>(k)] += v;
      }
      sum_entropy += clamp01(h * entropy_norm);
      sum_margin += p1 - p2;
      sum_row += r;
      sum_col += c;
    });
    const double n = static_cast<double>(seg.pixel_count);
    f.mean_entropy = sum_entropy / n;
    f.mean_margin = sum_margin / n;
    f.size = n;
    f.boundary_size = static_cast<double>(seg.boundary_count);
    f.interior_size = n - f.boundary_size;
    f.ratio_bd = n / f.boundary_size;
    f.ratio_in = f.interior_size / f.boundary_size;
    f.com_row = p.height > 1 ? (sum_row / n) / (p.height - 1) : 0.5;
    f.com_col = p.width > 1 ? (sum_col / n) / (p.width - 1) : 0.5;
    for (auto& v : f.mean_probs) v /= n;
    out.push_back(std::move(f));
  }
  return out;
}

// --- Gradient-boosted regression trees (least squares) ---

struct GbtNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double leaf_value = 0.0;
};

struct GbtTree {
  std::vector<GbtNode> nodes;

  double predict(const double* x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const GbtNode& n = nodes[static_cast<std::size_t>(i)];
      i = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].leaf_value;
  }
};

struct GbtRegressor {
  double base = 0.0;
  double learning_rate = 0.1;
  std::size_t n_features = 0;
  std::vector<GbtTree> trees;
  std::vector<double> train_mse;  // per boosting round, after adding each tree

  /// Raw ensemble output, clamped to [0, 1] at this API boundary.
  double predict_one(const double* x) const {
    double acc = base;
    for (const auto& t : trees) acc += learning_rate * t.predict(x);
    return clamp01(acc);
  }
};

struct GbtParams {
  int n_trees = 100;
  int max_depth = 4;
  double learning_rate = 0.1;
  int min_samples_leaf = 2;
  std::uint64_t seed = 0;  // kept for interface stability; fitting is exact and deterministic
};

namespace detail {

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double sse = std::numeric_limits<double>::infinity();
};

/// Exact greedy variance-reduction split over sorted feature values. Ties are
/// broken toward the lowest feature index, then the lowest threshold.
inline SplitChoice best_split(const FeatureMatrix& x, const std::vector<double>& residual,
                              const std::vector<std::size_t>& idx, int min_leaf) {
  SplitChoice best;
  const std::size_t n = idx.size();
  if (n < static_cast<std::size_t>(2 * min_leaf)) return best;
  std::vector<std::size_t> order(idx);
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t f = 0; f < x.cols; ++f) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double va = x.at(a, f), vb = x.at(b, f);
      if (va != vb) return va < vb;
      return a < b;
    });
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += residual[order[i]];
      prefix[i + 1] = total;
    }
    for (std::size_t i = static_cast<std::size_t>(min_leaf); i + min_leaf <= n; ++i) {
      const double vl = x.at(order[i - 1], f);
      const double vr = x.at(order[i], f);
      if (vl == vr) continue;  // cannot separate equal values
      const double nl = static_cast<double>(i);
      const double nr = static_cast<double>(n - i);
      const double sl = prefix[i];
      const double sr = total - sl;
      // Minimizing SSE == maximizing sum-of-squared-leaf-means; constant terms
      // cancel across candidates.
      const double score = -(sl * sl / nl + sr * sr / nr);
      if (score < best.sse - 1e-15) {
        best.found = true;
        best.feature = static_cast<int>(f);
        best.threshold = vl + (vr - vl) / 2.0;
        best.sse = score;
      }
    }
  }
  return best;
}

inline int build_tree(GbtTree& tree, const FeatureMatrix& x, const std::vector<double>& residual,
                      std::vector<std::size_t> idx, int depth, const GbtParams& params) {
  double mean = 0.0;
  for (auto i : idx) mean += residual[i];
  mean /= static_cast<double>(idx.size());

  const int node_id = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back({});
  tree.nodes.back().leaf_value = mean;

  if (depth >= params.max_depth) return node_id;
  bool constant = true;
  for (auto i : idx)
    if (residual[i] != residual[idx.front()]) {
      constant = false;
      break;
    }
  if (constant) return node_id;

  const SplitChoice split = best_split(x, residual, idx, params.min_samples_leaf);
  if (!split.found) return node_id;

  std::vector<std::size_t> left, right;
  for (auto i : idx)
    (x.at(i, static_cast<std::size_t>(split.feature)) <= split.threshold ? left : right)
        .push_back(i);
  idx.clear();
  idx.shrink_to_fit();

  const int l = build_tree(tree, x, residual, std::move(left), depth + 1, params);
  const int r = build_tree(tree, x, residual, std::move(right), depth + 1, params);
  GbtNode& node = tree.nodes[static_cast<std::size_t>(node_id)];
  node.feature = split.feature;
  node.threshold = split.threshold;
  node.left = l;
  node.right = r;
  return node_id;
}

}  // namespace detail

/// Least-squares boosting: each tree fits the residuals of the running
/// prediction with exact greedy splits. Deterministic for a given input order.
inline GbtRegressor gbt_fit(const FeatureMatrix& x, const std::vector<double>& targets,
                            const GbtParams& params = {}) {
  if (x.rows == 0 || targets.size() != x.rows)
    throw std::invalid_argument("gbt_fit: empty or mismatched training set");
  GbtRegressor reg;
  reg.learning_rate = params.learning_rate;
  reg.n_features = x.cols;
  reg.base = std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(x.rows);

  std::vector<double> pred(x.rows, reg.base);
  std::vector<double> residual(x.rows);
  std::vector<std::size_t> all(x.rows);
  std::iota(all.begin(), all.end(), 0);
  for (int t = 0; t < params.n_trees; ++t) {
    for (std::size_t i = 0; i < x.rows; ++i) residual[i] = targets[i] - pred[i];
    GbtTree tree;
    detail::build_tree(tree, x, residual, all, 0, params);
    for (std::size_t i = 0; i < x.rows; ++i)
      pred[i] += params.learning_rate * tree.predict(x.row(i));
    double mse = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double d = targets[i] - pred[i];
      mse += d * d;
    }
    reg.train_mse.push_back(mse / static_cast<double>(x.rows));
    reg.trees.push_back(std::move(tree));
  }
  return reg;
}

inline std::vector<double> gbt_predict(const GbtRegressor& reg, const FeatureMatrix& x) {
  if (x.rows > 0 && x.cols != reg.n_features)
    throw std::invalid_argument("gbt_predict: feature dimensionality mismatch");
  std::vector<double> out;
  out.reserve(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out.push_back(reg.predict_one(x.row(i)));
  return out;
}

inline nlohmann::json gbt_to_json(const GbtRegressor& reg) {
  nlohmann::json j;
  j["base"] = reg.base;
  j["learning_rate"] = reg.learning_rate;
  j["n_features"] = reg.n_features;
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : reg.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      nodes.push_back({{"feature", n.feature},
                       {"threshold", n.threshold},
                       {"left", n.left},
                       {"right", n.right},
                       {"leaf_value", n.leaf_value}});
    }
    trees.push_back(std::move(nodes));
  }
  j["trees"] = std::move(trees);
  j["train_mse"] = reg.train_mse;
  return j;
}

inline GbtRegressor gbt_from_json(const nlohmann::json& j) {
  GbtRegressor reg;
  try {
    reg.base = j.at("base").get<double>();
    reg.learning_rate = j.at("learning_rate").get<double>();
    reg.n_features = j.at("n_features").get<std::size_t>();
    for (const auto& t : j.at("trees")) {
      GbtTree tree;
      for (const auto& n : t) {
        tree.nodes.push_back({n.at("feature").get<int>(), n.at("threshold").get<double>(),
                              n.at("left").get<int>(), n.at("right").get<int>(),
                              n.at("leaf_value").get<double>()});
      }
      reg.trees.push_back(std::move(tree));
    }
    if (j.contains("train_mse")) reg.train_mse = j.at("train_mse").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw io_error(std::string("regressor JSON: ") + e.what());
  }
  return reg;
}

/// MetaSeg quality heatmap q: predicted IoU written onto every pixel of its
/// segment. The returned priority map is g1 = 1 - q.
inline ScalarMap quality_priority(const ProbMap& p, const GbtRegressor& reg) {
  const SegMask mask = argmax_mask(p);
  const std::vector<Segment> segments = connected_components(mask);
  const std::vector<double> preds = gbt_predict(reg, features_matrix(extract_features(p, segments)));
  ScalarMap out(p.height, p.width);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const float g1 = static_cast<float>(1.0 - preds[s]);
    segments[s].for_each_pixel([&](int r, int c) { out.at(r, c) = g1; });
  }
  return out;
}

struct MetaSegResult {
  GbtRegressor model;
  std::vector<ScalarMap> priorities;  // g1 per unlabeled image, input order
};

struct MetaImage {
  const ProbMap* prob = nullptr;
  const SegMask* gt = nullptr;
};

/// One MetaSeg round: featurize the meta set's predicted segments, fit the
/// regressor against their true IoU, then produce g1 maps for the unlabeled
/// predictions. Retrained from scratch every call, as predictions change each
/// iteration.
inline MetaSegResult metaseg_cycle(const std::vector<MetaImage>& meta,
                                   const std::vector<const ProbMap*>& unlabeled,
                                   const GbtParams& params = {}) {
  std::vector<SegmentFeatures> feats;
  std::vector<double> targets;
  for (const auto& m : meta) {
    const SegMask mask = argmax_mask(*m.prob);
    const std::vector<Segment> segments = connected_components(mask);
    auto f = extract_features(*m.prob, segments);
    auto t = compute_targets(segments, *m.gt);
    feats.insert(feats.end(), std::make_move_iterator(f.begin()), std::make_move_iterator(f.end()));
    targets.insert(targets.end(), t.begin(), t.end());
  }
  if (feats.empty()) throw std::invalid_argument("metaseg_cycle: meta set produced no segments");

  MetaSegResult result;
  result.model = gbt_fit(features_matrix(feats), targets, params);
  result.priorities.reserve(unlabeled.size());
  for (const ProbMap* p : unlabeled) result.priorities.push_back(quality_priority(*p, result.model));
  return result;
}

}  // namespace boxquery
