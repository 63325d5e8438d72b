#pragma once

#include <algorithm>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "boxquery/clickcost.hpp"
#include "boxquery/core.hpp"
#include "boxquery/gridmaps.hpp"
#include "boxquery/metaseg.hpp"

namespace boxquery {

enum class StrategyKind {
  random,
  entropy,
  entropy_plus,
  metabox,
  metabox_plus,
  entropy_star,
  metabox_star,
};

inline const std::vector<std::pair<StrategyKind, const char*>>& strategy_names() {
  static const std::vector<std::pair<StrategyKind, const char*>> names = {
      {StrategyKind::random, "RandomBox"},
      {StrategyKind::entropy, "EntropyBox"},
      {StrategyKind::entropy_plus, "EntropyBox+"},
      {StrategyKind::metabox, "MetaBox"},
      {StrategyKind::metabox_plus, "MetaBox+"},
      {StrategyKind::entropy_star, "EntropyBox+*"},
      {StrategyKind::metabox_star, "MetaBox+*"},
  };
  return names;
}

inline std::string strategy_name(StrategyKind kind) {
  for (const auto& [k, n] : strategy_names())
    if (k == kind) return n;
  return "?";
}

inline std::string list_strategy_names() {
  std::string out;
  for (const auto& [k, n] : strategy_names()) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}

inline StrategyKind parse_strategy(const std::string& name) {
  for (const auto& [k, n] : strategy_names())
    if (name == n) return k;
  throw usage_error("unknown strategy '" + name + "' (valid: " + list_strategy_names() + ")");
}

inline bool strategy_uses_metaseg(StrategyKind k) {
  return k == StrategyKind::metabox || k == StrategyKind::metabox_plus ||
         k == StrategyKind::metabox_star;
}

inline bool strategy_uses_click_estimate(StrategyKind k) {
  return k == StrategyKind::entropy_plus || k == StrategyKind::metabox_plus;
}

/// Oracle-cost variants: the click factor comes from true ground-truth
/// polygon vertices instead of the RDP estimate.
inline bool strategy_uses_true_clicks(StrategyKind k) {
  return k == StrategyKind::entropy_star || k == StrategyKind::metabox_star;
}

struct Strategy {
  StrategyKind kind = StrategyKind::random;
  std::uint64_t seed = 0;  // drives the random kind only
};

/// One scored query candidate: a b-wide box anchored at (row, col).
struct CandidateBox {
  std::string image_id;
  int row = 0;
  int col = 0;
  int width = 0;
  double score = 0.0;

  BoxRegion region() const { return {row, col, width}; }
  bool operator==(const CandidateBox&) const = default;
};

/// Element-wise product of priority factors (Eq. joint priority).
inline ScalarMap joint_priority(const std::vector<const ScalarMap*>& factors) {
  if (factors.empty()) throw std::invalid_argument("joint_priority: no factors");
  ScalarMap out = *factors.front();
  for (std::size_t f = 1; f < factors.size(); ++f) {
    const ScalarMap& m = *factors[f];
    if (m.height != out.height || m.width != out.width)
      throw std::invalid_argument("joint_priority: dimension mismatch");
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= m.values[i];
  }
  return out;
}

struct PriorityContext {
  int box_width = 32;
  int stride = 1;
  double epsilon = 1.5;                    // RDP parameter for the click factor
  const GbtRegressor* meta_model = nullptr;  // required for MetaBox kinds
  std::uint64_t seed = 0;
  int iteration = 0;
};

struct ImagePriorityInput {
  std::string id;
  const ProbMap* prob = nullptr;      // not needed for random
  const BitMask* labeled = nullptr;   // may be null (nothing labeled)
  const ScalarMap* quality = nullptr;  // precomputed g1 (else computed from meta_model)
  const std::vector<Polygon>* polygons = nullptr;  // star kinds only
};

namespace detail {

inline ScalarMap masked(ScalarMap m, const BitMask* labeled) {
  if (!labeled) return m;
  return mask_labeled(m, *labeled);
}

}  // namespace detail

/// Per-image aggregated priority map on the anchor grid. Every factor map has
/// labeled pixels zeroed before aggregation; the random kind draws one score
/// per box and forces fully-labeled boxes to zero.
inline ScalarMap build_image_priority(const Strategy& strategy, const PriorityContext& ctx,
                                      const ImagePriorityInput& in) {
  if (strategy.kind == StrategyKind::random) {
    int h = 0, w = 0;
    if (in.prob) {
      h = in.prob->height;
      w = in.prob->width;
    } else if (in.labeled) {
      h = in.labeled->height;
      w = in.labeled->width;
    } else {
      throw std::invalid_argument("build_image_priority: random kind needs image dims");
    }
    const int ah = (h - ctx.box_width) / ctx.stride + 1;
    const int aw = (w - ctx.box_width) / ctx.stride + 1;
    Rng rng(derive_seed(strategy.seed,
                        {0x72616e64ull, static_cast<std::uint64_t>(ctx.iteration), fnv1a64(in.id)}));
    ScalarMap out(ah, aw);
    for (auto& v : out.values) v = static_cast<float>(rng.uniform());
    if (in.labeled) {
      ScalarMap ones(h, w, 1.0f);
      const ScalarMap unlabeled_frac =
          aggregate_boxes(mask_labeled(ones, *in.labeled), ctx.box_width, ctx.stride);
      for (std::size_t i = 0; i < out.values.size(); ++i)
        if (unlabeled_frac.values[i] <= 0.0f) out.values[i] = 0.0f;
    }
    return out;
  }

  if (!in.prob) throw std::invalid_argument("build_image_priority: missing prediction");
  std::vector<ScalarMap> factors;

  const bool wants_entropy = strategy.kind == StrategyKind::entropy ||
                             strategy.kind == StrategyKind::entropy_plus ||
                             strategy.kind == StrategyKind::entropy_star;
  if (wants_entropy)
    factors.push_back(aggregate_boxes(detail::masked(entropy_map(*in.prob), in.labeled),
                                      ctx.box_width, ctx.stride));

  if (strategy_uses_metaseg(strategy.kind)) {
    ScalarMap g1;
    if (in.quality) {
      g1 = *in.quality;
    } else {
      if (!ctx.meta_model)
        throw std::invalid_argument("build_image_priority: MetaBox kind without a MetaSeg model");
      g1 = quality_priority(*in.prob, *ctx.meta_model);
    }
    factors.push_back(
        aggregate_boxes(detail::masked(std::move(g1), in.labeled), ctx.box_width, ctx.stride));
  }

  if (strategy_uses_click_estimate(strategy.kind)) {
    ScalarMap g2 = click_priority(argmax_mask(*in.prob), ctx.epsilon);
    factors.push_back(
        aggregate_boxes(detail::masked(std::move(g2), in.labeled), ctx.box_width, ctx.stride));
  } else if (strategy_uses_true_clicks(strategy.kind)) {
    if (!in.polygons)
      throw std::invalid_argument(
          "build_image_priority: oracle-cost kind requires ground-truth polygons");
    ScalarMap g2 = vertex_cost_map(*in.polygons, in.prob->height, in.prob->width);
    for (auto& v : g2.values) v = 1.0f - v;
    factors.push_back(
        aggregate_boxes(detail::masked(std::move(g2), in.labeled), ctx.box_width, ctx.stride));
  }

  std::vector<const ScalarMap*> ptrs;
  for (const auto& f : factors) ptrs.push_back(&f);
  return joint_priority(ptrs);
}

/// Spec-named convenience: aggregated priority maps for a batch of images.
inline std::vector<ScalarMap> build_priorities(const Strategy& strategy,
                                               const PriorityContext& ctx,
                                               const std::vector<ImagePriorityInput>& inputs) {
  std::vector<ScalarMap> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(build_image_priority(strategy, ctx, in));
  return out;
}

/// Expand an anchor-grid priority map into scored candidates.
inline std::vector<CandidateBox> build_candidates(const ScalarMap& priorities,
                                                  const std::string& image_id, int box_width,
                                                  int stride) {
  std::vector<CandidateBox> out;
  out.reserve(priorities.values.size());
  for (int i = 0; i < priorities.height; ++i)
    for (int j = 0; j < priorities.width; ++j)
      out.push_back({image_id, i * stride, j * stride, box_width, priorities.at(i, j)});
  return out;
}

namespace detail {

struct CandidateOrder {
  /// Max-heap comparator: highest score first, ties by (image_id, row, col).
  bool operator()(const CandidateBox* a, const CandidateBox* b) const {
    if (a->score != b->score) return a->score < b->score;
    if (a->image_id != b->image_id) return a->image_id > b->image_id;
    if (a->row != b->row) return a->row > b->row;
    return a->col > b->col;
  }
};

}  // namespace detail

/// Greedy query selection: repeatedly take the highest-scoring candidate that
/// does not overlap an already-selected box in the same image. Boxes in
/// different images never conflict. Conflicting heap entries are discarded
/// lazily when popped. Returns min(m_q, feasible) boxes in selection order.
inline std::vector<CandidateBox> select_query(const std::vector<CandidateBox>& candidates,
                                              int m_q) {
  if (candidates.empty()) throw std::invalid_argument("select_query: no candidates");
  if (m_q < 1) throw std::invalid_argument("select_query: m_q must be >= 1");
  std::priority_queue<const CandidateBox*, std::vector<const CandidateBox*>,
                      detail::CandidateOrder>
      heap;
  for (const auto& c : candidates) heap.push(&c);

  std::vector<CandidateBox> selected;
  std::vector<std::pair<std::string, BoxRegion>> taken;
  while (!heap.empty() && static_cast<int>(selected.size()) < m_q) {
    const CandidateBox* top = heap.top();
    heap.pop();
    bool conflict = false;
    for (const auto& [id, region] : taken) {
      if (id == top->image_id && boxes_overlap(region, top->region())) {
        conflict = true;
        break;
      }
    }
    if (conflict) continue;
    selected.push_back(*top);
    taken.emplace_back(top->image_id, top->region());
  }
  return selected;
}

}  // namespace boxquery
