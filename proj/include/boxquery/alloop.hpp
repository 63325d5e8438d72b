#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxquery/acquisition.hpp"
#include "boxquery/clickcost.hpp"
#include "boxquery/core.hpp"
#include "boxquery/formats.hpp"
#include "boxquery/metaseg.hpp"
#include "boxquery/synth.hpp"

namespace boxquery {

// --- Experiment configuration (flat key=value file) ---

struct ExperimentConfig {
  std::string pool_dir;
  std::string val_dir;
  std::string strategy = "RandomBox";
  int b = 32;
  int stride = 8;
  int m_q = 32;
  int m_init = 5;
  int n_meta = 5;
  double epsilon = 1.5;
  int iterations = 10;
  int repetitions = 1;
  std::uint64_t seed = 0;
  std::string adapter = "pixel_classifier";
  std::optional<double> full_set_miou;
  std::string out_dir = "out";
  std::string pred_dir;  // file adapter: per-iteration ProbMap directories
  int threads = 0;       // 0 = BOXQUERY_THREADS env, else 1
};

inline ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    if (strip(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw usage_error("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    try {
      if (key == "pool_dir") cfg.pool_dir = value;
      else if (key == "val_dir") cfg.val_dir = value;
      else if (key == "strategy") cfg.strategy = value;
      else if (key == "b") cfg.b = std::stoi(value);
      else if (key == "stride") cfg.stride = std::stoi(value);
      else if (key == "m_q") cfg.m_q = std::stoi(value);
      else if (key == "m_init") cfg.m_init = std::stoi(value);
      else if (key == "n_meta") cfg.n_meta = std::stoi(value);
      else if (key == "epsilon") cfg.epsilon = std::stod(value);
      else if (key == "iterations") cfg.iterations = std::stoi(value);
      else if (key == "repetitions") cfg.repetitions = std::stoi(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "adapter") cfg.adapter = value;
      else if (key == "full_set_miou") cfg.full_set_miou = std::stod(value);
      else if (key == "out_dir") cfg.out_dir = value;
      else if (key == "pred_dir") cfg.pred_dir = value;
      else if (key == "threads") cfg.threads = std::stoi(value);
      else throw usage_error("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    } catch (const usage_error&) {
      throw;
    } catch (const std::exception&) {
      throw usage_error("config line " + std::to_string(line_no) + ": bad value for '" + key + "'");
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw usage_error("cannot open config: " + path.string());
  return parse_config(is);
}

// --- Dataset on disk: manifest + images + masks + polygons + stats ---

struct DatasetImage {
  std::string id;
  ImageRGB image;
  SegMask gt;
  std::vector<Polygon> polygons;
};

struct Dataset {
  std::vector<DatasetImage> images;
  int height = 0;
  int width = 0;
  int classes = 0;
  std::int64_t pool_cp = 0;
  std::int64_t pool_cc = 0;

  std::int64_t total_pixels() const {
    return static_cast<std::int64_t>(images.size()) * height * width;
  }

  const ComponentLabels& gt_components(std::size_t i) const {
    if (component_cache_.empty()) component_cache_.resize(images.size());
    auto& slot = component_cache_[i];
    if (!slot) slot = std::make_unique<ComponentLabels>(label_components(images[i].gt));
    return *slot;
  }

 private:
  mutable std::vector<std::unique_ptr<ComponentLabels>> component_cache_;
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw io_error("cannot open manifest: " + (dir / "manifest.txt").string());

  std::map<std::string, std::vector<Polygon>> polys_by_image;
  {
    std::ifstream jsonl(dir / "polygons.jsonl", std::ios::binary);
    if (!jsonl) throw io_error("cannot open polygons: " + (dir / "polygons.jsonl").string());
    for (auto& poly : read_polygons_jsonl(jsonl)) {
      auto& bucket = polys_by_image[poly.image_id];
      bucket.push_back(std::move(poly));
    }
  }

  std::string line;
  while (std::getline(manifest, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    DatasetImage img;
    const fs::path rel(line);
    img.id = rel.stem().string();
    img.image = load_image_ppm(dir / rel);
    img.gt = load_mask_pgm(dir / "masks" / (img.id + ".pgm"));
    if (auto it = polys_by_image.find(img.id); it != polys_by_image.end())
      img.polygons = std::move(it->second);
    if (ds.images.empty()) {
      ds.height = img.image.height;
      ds.width = img.image.width;
    } else if (img.image.height != ds.height || img.image.width != ds.width) {
      throw io_error("dataset images must share dimensions (" + img.id + ")");
    }
    if (img.gt.height != img.image.height || img.gt.width != img.image.width)
      throw io_error("mask/image dimension mismatch for " + img.id);
    ds.images.push_back(std::move(img));
  }
  if (ds.images.empty()) throw io_error("dataset manifest is empty: " + dir.string());

  std::ifstream stats_is(dir / "stats.json");
  if (!stats_is) throw io_error("cannot open stats: " + (dir / "stats.json").string());
  try {
    nlohmann::json j;
    stats_is >> j;
    ds.classes = j.at("classes").get<int>();
    ds.pool_cp = j.at("c_p").get<std::int64_t>();
    ds.pool_cc = j.at("c_c").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw io_error(std::string("stats.json: ") + e.what());
  }
  return ds;
}

// --- Model adapters ---

/// Behavioral contract standing in for the segmentation network: retrained
/// from scratch each call; prediction is a valid ProbMap for any dataset
/// image (pool or validation).
class ModelAdapter {
 public:
  virtual ~ModelAdapter() = default;
  virtual void train(const Dataset& pool, const std::vector<BitMask>& labeled, int iteration) = 0;
  virtual ProbMap predict(const DatasetImage& img) const = 0;
  virtual std::string name() const = 0;
};

/// Ground truth corrupted per pixel with probability p = p_max * (1 - l)^gamma
/// where l is the labeled fraction of the pool. Corrupted pixels get a random
/// wrong class; softmax confidence is 1 - eta on the chosen class.
class NoisyOracleAdapter : public ModelAdapter {
 public:
  explicit NoisyOracleAdapter(std::uint64_t seed, double p_max = 0.6, double gamma = 1.0,
                              double eta = 0.1)
      : seed_(seed), p_max_(p_max), gamma_(gamma), eta_(eta) {}

  void train(const Dataset& pool, const std::vector<BitMask>& labeled, int iteration) override {
    std::int64_t set = 0;
    for (const auto& m : labeled) set += m.count_set();
    labeled_fraction_ = pool.total_pixels() > 0
                            ? static_cast<double>(set) / static_cast<double>(pool.total_pixels())
                            : 0.0;
    classes_ = pool.classes;
    iteration_ = iteration;
  }

  ProbMap predict(const DatasetImage& img) const override {
    const double p_corrupt = p_max_ * std::pow(1.0 - labeled_fraction_, gamma_);
    Rng rng(derive_seed(seed_, {0x6e6f6973ull, static_cast<std::uint64_t>(iteration_),
                                fnv1a64(img.id)}));
    ProbMap out(img.gt.height, img.gt.width, classes_);
    const float off = static_cast<float>(eta_ / (classes_ - 1));
    const float on = static_cast<float>(1.0 - eta_);
    for (int r = 0; r < out.height; ++r) {
      for (int c = 0; c < out.width; ++c) {
        int cls = img.gt.at(r, c) == img.gt.ignore_id ? 0 : img.gt.at(r, c);
        if (rng.uniform() < p_corrupt) {
          const int shift = static_cast<int>(rng.uniform_int(1, classes_ - 1));
          cls = (cls + shift) % classes_;
        }
        for (int k = 0; k < classes_; ++k) out.at(r, c, k) = k == cls ? on : off;
      }
    }
    return out;
  }

  std::string name() const override { return "noisy_oracle"; }

 private:
  std::uint64_t seed_;
  double p_max_, gamma_, eta_;
  double labeled_fraction_ = 0.0;
  int classes_ = 2;
  int iteration_ = 0;
};

/// Per-pixel classifier over (r, g, b, row, col) features: class centroids
/// over labeled pixels, softmax over negative squared distances with
/// temperature tau. Classes without labeled pixels get probability zero.
class PixelClassifierAdapter : public ModelAdapter {
 public:
  explicit PixelClassifierAdapter(double tau = 0.1, double spatial_weight = 0.25)
      : tau_(tau), spatial_weight_(spatial_weight) {}

  void train(const Dataset& pool, const std::vector<BitMask>& labeled, int) override {
    classes_ = pool.classes;
    centroids_.assign(static_cast<std::size_t>(classes_) * 5, 0.0);
    counts_.assign(static_cast<std::size_t>(classes_), 0);
    for (std::size_t i = 0; i < pool.images.size(); ++i) {
      const DatasetImage& img = pool.images[i];
      const BitMask& mask = labeled[i];
      for (int r = 0; r < img.gt.height; ++r) {
        for (int c = 0; c < img.gt.width; ++c) {
          if (!mask.get(r, c)) continue;
          const std::uint16_t cls = img.gt.at(r, c);
          if (cls == img.gt.ignore_id || cls >= classes_) continue;
          double feat[5];
          features(img, r, c, feat);
          double* cen = centroids_.data() + static_cast<std::size_t>(cls) * 5;
          for (int k = 0; k < 5; ++k) cen[k] += feat[k];
          ++counts_[cls];
        }
      }
    }
    for (int cls = 0; cls < classes_; ++cls) {
      if (counts_[static_cast<std::size_t>(cls)] == 0) continue;
      double* cen = centroids_.data() + static_cast<std::size_t>(cls) * 5;
      for (int k = 0; k < 5; ++k) cen[k] /= static_cast<double>(counts_[static_cast<std::size_t>(cls)]);
    }
  }

  ProbMap predict(const DatasetImage& img) const override {
    ProbMap out(img.image.height, img.image.width, classes_);
    std::vector<double> score(static_cast<std::size_t>(classes_));
    for (int r = 0; r < out.height; ++r) {
      for (int c = 0; c < out.width; ++c) {
        double feat[5];
        features(img, r, c, feat);
        double best = -1e300;
        for (int cls = 0; cls < classes_; ++cls) {
          if (counts_[static_cast<std::size_t>(cls)] == 0) {
            score[static_cast<std::size_t>(cls)] = -1e300;
            continue;
          }
          const double* cen = centroids_.data() + static_cast<std::size_t>(cls) * 5;
          double d2 = 0.0;
          for (int k = 0; k < 5; ++k) {
            const double d = feat[k] - cen[k];
            d2 += d * d;
          }
          const double s = -d2 / tau_;
          score[static_cast<std::size_t>(cls)] = s;
          best = std::max(best, s);
        }
        double sum = 0.0;
        for (int cls = 0; cls < classes_; ++cls) {
          double& s = score[static_cast<std::size_t>(cls)];
          s = s <= -1e299 ? 0.0 : std::exp(s - best);
          sum += s;
        }
        for (int cls = 0; cls < classes_; ++cls)
          out.at(r, c, cls) = static_cast<float>(score[static_cast<std::size_t>(cls)] / sum);
      }
    }
    return out;
  }

  std::string name() const override { return "pixel_classifier"; }

 private:
  void features(const DatasetImage& img, int r, int c, double* out) const {
    const std::uint8_t* px = img.image.pixel(r, c);
    out[0] = px[0] / 255.0;
    out[1] = px[1] / 255.0;
    out[2] = px[2] / 255.0;
    out[3] = spatial_weight_ * (img.image.height > 1 ? static_cast<double>(r) / (img.image.height - 1) : 0.5);
    out[4] = spatial_weight_ * (img.image.width > 1 ? static_cast<double>(c) / (img.image.width - 1) : 0.5);
  }

  double tau_;
  double spatial_weight_;
  int classes_ = 2;
  std::vector<double> centroids_;
  std::vector<std::int64_t> counts_;
};

/// Bridge to an external trainer: reads ProbMaps from
/// <pred_dir>/iter_<k>/<image_id>.pmap written before each iteration.
class FileAdapter : public ModelAdapter {
 public:
  explicit FileAdapter(std::filesystem::path pred_dir) : pred_dir_(std::move(pred_dir)) {}

  void train(const Dataset&, const std::vector<BitMask>&, int iteration) override {
    iteration_ = iteration;
  }

  ProbMap predict(const DatasetImage& img) const override {
    const auto path = pred_dir_ / ("iter_" + std::to_string(iteration_)) / (img.id + ".pmap");
    if (!std::filesystem::exists(path))
      throw io_error("file adapter: missing prediction " + path.string());
    return load_pmap(path);
  }

  std::string name() const override { return "file"; }

 private:
  std::filesystem::path pred_dir_;
  int iteration_ = 0;
};

inline std::unique_ptr<ModelAdapter> builtin_adapters(const std::string& kind, std::uint64_t seed,
                                                      const std::string& pred_dir = "") {
  if (kind == "noisy_oracle") return std::make_unique<NoisyOracleAdapter>(seed);
  if (kind == "pixel_classifier") return std::make_unique<PixelClassifierAdapter>();
  if (kind == "file") {
    if (pred_dir.empty()) throw usage_error("file adapter requires pred_dir");
    return std::make_unique<FileAdapter>(pred_dir);
  }
  throw usage_error("unknown adapter '" + kind +
                    "' (valid: noisy_oracle, pixel_classifier, file)");
}

// --- Active-learning state ---

struct ALState {
  int run = 0;
  std::string strategy;
  std::uint64_t run_seed = 0;
  int query_rounds = 0;  // completed query/annotate rounds
  std::vector<std::string> image_ids;
  std::vector<std::uint8_t> in_init;  // fully labeled at init (L0 or M)
  std::vector<std::uint8_t> in_meta;  // member of the MetaSeg set M
  std::vector<BitMask> labeled;
  CostLedger ledger;
  std::vector<ResultRow> history;  // one row per evaluation point

  int iteration() const { return static_cast<int>(history.size()); }

  std::vector<std::size_t> unlabeled_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labeled.size(); ++i) {
      const auto& m = labeled[i];
      bool full = true;
      for (auto b : m.bits)
        if (!b) {
          full = false;
          break;
        }
      if (!full) out.push_back(i);
    }
    return out;
  }
};

/// Sample L0 (and M for MetaSeg strategies) as fully labeled images and charge
/// their clicks to the ledger; MetaSeg's extra images pay their fair share.
inline ALState init_experiment(const Dataset& pool, const ExperimentConfig& cfg, int run,
                               std::uint64_t run_seed) {
  const StrategyKind kind = parse_strategy(cfg.strategy);
  const int n_meta = strategy_uses_metaseg(kind) ? cfg.n_meta : 0;
  if (cfg.m_init < 1) throw usage_error("m_init must be >= 1");
  if (static_cast<std::size_t>(cfg.m_init + n_meta) > pool.images.size())
    throw usage_error("pool smaller than m_init + n_meta");

  ALState state;
  state.run = run;
  state.strategy = cfg.strategy;
  state.run_seed = run_seed;
  state.in_init.assign(pool.images.size(), 0);
  state.in_meta.assign(pool.images.size(), 0);
  for (const auto& img : pool.images) state.image_ids.push_back(img.id);
  state.labeled.assign(pool.images.size(), BitMask(pool.height, pool.width, false));

  std::vector<std::size_t> order(pool.images.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(run_seed, {0x696e6974ull}));
  rng.shuffle(order);

  state.ledger.pool_cp = pool.pool_cp;
  state.ledger.pool_cc = pool.pool_cc;
  state.ledger.total_pixels = pool.total_pixels();
  for (int i = 0; i < cfg.m_init + n_meta; ++i) {
    const std::size_t idx = order[static_cast<std::size_t>(i)];
    state.in_init[idx] = 1;
    if (i >= cfg.m_init) state.in_meta[idx] = 1;
    state.labeled[idx] = BitMask(pool.height, pool.width, true);
    state.ledger.labeled_pixels += static_cast<std::int64_t>(pool.height) * pool.width;
    for (const auto& poly : pool.images[idx].polygons)
      state.ledger.init_cp += static_cast<std::int64_t>(poly.vertices.size());
    state.ledger.init_cc += pool.gt_components(idx).count;
  }
  return state;
}

inline double evaluate_miou(const ModelAdapter& adapter, const Dataset& val, int threads) {
  std::vector<SegMask> preds(val.images.size());
  parallel_for(val.images.size(), threads,
               [&](std::size_t i) { preds[i] = argmax_mask(adapter.predict(val.images[i])); });
  IouAccumulator acc;
  for (std::size_t i = 0; i < val.images.size(); ++i) acc.add(preds[i], val.images[i].gt);
  return acc.mean_iou();
}

namespace detail {

inline void record_row(ALState& state, double miou) {
  ResultRow row;
  row.iteration = state.iteration();
  row.run = state.run;
  row.strategy = state.strategy;
  const Costs costs = compute_costs(state.ledger);
  row.cost_a = costs.cost_a;
  row.cost_b = costs.cost_b;
  row.cost_p = costs.cost_p;
  row.miou = miou;
  row.c_p = state.ledger.init_cp + state.ledger.query_cp;
  row.c_i = state.ledger.query_ci;
  row.c_b = state.ledger.query_cb;
  row.c_c = state.ledger.init_cc + state.ledger.query_cc;
  state.history.push_back(std::move(row));
}

}  // namespace detail

/// Copy ground truth into a queried box: extend the labeled mask and charge
/// true clicks for the newly labeled area.
inline void annotate_box(ALState& state, const Dataset& pool, std::size_t image_index,
                         const BoxRegion& box) {
  const DatasetImage& img = pool.images[image_index];
  BitMask& mask = state.labeled[image_index];
  const ClickCounts clicks =
      count_true_clicks(box, img.polygons, img.gt, pool.gt_components(image_index), &mask);
  state.ledger.query_cp += clicks.c_p;
  state.ledger.query_ci += clicks.c_i;
  state.ledger.query_cb += clicks.c_b;
  state.ledger.query_cc += clicks.c_c;
  std::int64_t fresh = 0;
  for (int r = box.row; r < box.row + box.width; ++r) {
    for (int c = box.col; c < box.col + box.width; ++c) {
      if (mask.get(r, c)) continue;
      mask.set(r, c, true);
      ++fresh;
    }
  }
  state.ledger.labeled_pixels += fresh;
}

/// One AL cycle: retrain from scratch, evaluate and record, then (while the
/// budget allows and unlabeled data remains) score, query m_q non-overlapping
/// boxes, and let the oracle annotate them. Returns false when no annotation
/// happened.
inline bool run_iteration(ALState& state, const Dataset& pool, const Dataset& val,
                          ModelAdapter& adapter, const Strategy& strategy,
                          const ExperimentConfig& cfg, int threads = 1) {
  adapter.train(pool, state.labeled, state.query_rounds);
  detail::record_row(state, evaluate_miou(adapter, val, threads));

  if (state.query_rounds >= cfg.iterations) return false;
  const std::vector<std::size_t> unlabeled = state.unlabeled_indices();
  if (unlabeled.empty()) return false;

  const StrategyKind kind = parse_strategy(cfg.strategy);
  GbtRegressor meta_model;
  std::vector<ProbMap> probs;
  if (kind != StrategyKind::random) {
    probs.resize(unlabeled.size());
    parallel_for(unlabeled.size(), threads,
                 [&](std::size_t i) { probs[i] = adapter.predict(pool.images[unlabeled[i]]); });
  }
  if (strategy_uses_metaseg(kind)) {
    std::vector<ProbMap> meta_probs;
    std::vector<MetaImage> meta;
    std::vector<std::size_t> meta_idx;
    for (std::size_t i = 0; i < pool.images.size(); ++i)
      if (state.in_meta[i]) meta_idx.push_back(i);
    meta_probs.resize(meta_idx.size());
    parallel_for(meta_idx.size(), threads,
                 [&](std::size_t i) { meta_probs[i] = adapter.predict(pool.images[meta_idx[i]]); });
    for (std::size_t i = 0; i < meta_idx.size(); ++i)
      meta.push_back({&meta_probs[i], &pool.images[meta_idx[i]].gt});
    meta_model = metaseg_cycle(meta, {}).model;
  }

  PriorityContext ctx;
  ctx.box_width = cfg.b;
  ctx.stride = cfg.stride;
  ctx.epsilon = cfg.epsilon;
  ctx.meta_model = strategy_uses_metaseg(kind) ? &meta_model : nullptr;
  ctx.seed = strategy.seed;
  ctx.iteration = state.query_rounds;

  std::vector<ScalarMap> priorities(unlabeled.size());
  parallel_for(unlabeled.size(), threads, [&](std::size_t i) {
    const std::size_t idx = unlabeled[i];
    ImagePriorityInput input;
    input.id = pool.images[idx].id;
    input.prob = kind == StrategyKind::random ? nullptr : &probs[i];
    input.labeled = &state.labeled[idx];
    input.polygons = &pool.images[idx].polygons;
    priorities[i] = build_image_priority(strategy, ctx, input);
  });

  std::vector<CandidateBox> candidates;
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    auto boxes = build_candidates(priorities[i], pool.images[unlabeled[i]].id, cfg.b, cfg.stride);
    candidates.insert(candidates.end(), std::make_move_iterator(boxes.begin()),
                      std::make_move_iterator(boxes.end()));
  }

  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < pool.images.size(); ++i) index_of[pool.images[i].id] = i;
  for (const auto& box : select_query(candidates, cfg.m_q))
    annotate_box(state, pool, index_of.at(box.image_id), box.region());
  ++state.query_rounds;
  return true;
}

// --- Checkpointing ---

inline void save_checkpoint(const ALState& state, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "masks");
  nlohmann::json j;
  j["version"] = 1;
  j["run"] = state.run;
  j["strategy"] = state.strategy;
  j["run_seed"] = state.run_seed;
  j["query_rounds"] = state.query_rounds;
  j["image_ids"] = state.image_ids;
  j["in_init"] = state.in_init;
  j["in_meta"] = state.in_meta;
  j["ledger"] = {{"init_cp", state.ledger.init_cp},
                 {"init_cc", state.ledger.init_cc},
                 {"query_cp", state.ledger.query_cp},
                 {"query_ci", state.ledger.query_ci},
                 {"query_cb", state.ledger.query_cb},
                 {"query_cc", state.ledger.query_cc},
                 {"pool_cp", state.ledger.pool_cp},
                 {"pool_cc", state.ledger.pool_cc},
                 {"labeled_pixels", state.ledger.labeled_pixels},
                 {"total_pixels", state.ledger.total_pixels}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : state.history) {
    rows.push_back({{"iteration", r.iteration},
                    {"run", r.run},
                    {"strategy", r.strategy},
                    {"cost_a", r.cost_a},
                    {"cost_b", r.cost_b},
                    {"cost_p", r.cost_p},
                    {"miou", r.miou},
                    {"c_p", r.c_p},
                    {"c_i", r.c_i},
                    {"c_b", r.c_b},
                    {"c_c", r.c_c}});
  }
  j["history"] = std::move(rows);
  std::ofstream os(dir / "state.json", std::ios::binary);
  if (!os) throw io_error("cannot write checkpoint: " + dir.string());
  os << j.dump(2) << "\n";
  for (std::size_t i = 0; i < state.labeled.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "labeled_%05zu.pgm", i);
    save_bitmask_pgm(state.labeled[i], dir / "masks" / buf);
  }
}

inline ALState load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "state.json", std::ios::binary);
  if (!is) throw io_error("cannot open checkpoint: " + dir.string());
  nlohmann::json j;
  try {
    is >> j;
    if (j.at("version").get<int>() != 1) throw io_error("checkpoint: unsupported version");
    ALState state;
    state.run = j.at("run").get<int>();
    state.strategy = j.at("strategy").get<std::string>();
    state.run_seed = j.at("run_seed").get<std::uint64_t>();
    state.query_rounds = j.at("query_rounds").get<int>();
    state.image_ids = j.at("image_ids").get<std::vector<std::string>>();
    state.in_init = j.at("in_init").get<std::vector<std::uint8_t>>();
    state.in_meta = j.at("in_meta").get<std::vector<std::uint8_t>>();
    const auto& l = j.at("ledger");
    state.ledger.init_cp = l.at("init_cp").get<std::int64_t>();
    state.ledger.init_cc = l.at("init_cc").get<std::int64_t>();
    state.ledger.query_cp = l.at("query_cp").get<std::int64_t>();
    state.ledger.query_ci = l.at("query_ci").get<std::int64_t>();
    state.ledger.query_cb = l.at("query_cb").get<std::int64_t>();
    state.ledger.query_cc = l.at("query_cc").get<std::int64_t>();
    state.ledger.pool_cp = l.at("pool_cp").get<std::int64_t>();
    state.ledger.pool_cc = l.at("pool_cc").get<std::int64_t>();
    state.ledger.labeled_pixels = l.at("labeled_pixels").get<std::int64_t>();
    state.ledger.total_pixels = l.at("total_pixels").get<std::int64_t>();
    for (const auto& r : j.at("history")) {
      ResultRow row;
      row.iteration = r.at("iteration").get<int>();
      row.run = r.at("run").get<int>();
      row.strategy = r.at("strategy").get<std::string>();
      row.cost_a = r.at("cost_a").get<double>();
      row.cost_b = r.at("cost_b").get<double>();
      row.cost_p = r.at("cost_p").get<double>();
      row.miou = r.at("miou").get<double>();
      row.c_p = r.at("c_p").get<std::int64_t>();
      row.c_i = r.at("c_i").get<std::int64_t>();
      row.c_b = r.at("c_b").get<std::int64_t>();
      row.c_c = r.at("c_c").get<std::int64_t>();
      state.history.push_back(std::move(row));
    }
    for (std::size_t i = 0; i < state.image_ids.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "labeled_%05zu.pgm", i);
      state.labeled.push_back(load_bitmask_pgm(dir / "masks" / buf));
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw io_error(std::string("checkpoint JSON: ") + e.what());
  }
}

// --- Full experiment driver ---

struct ExperimentResult {
  std::vector<ResultRow> rows;
  double full_set_miou = 0.0;
};

inline std::uint64_t run_seed_for(const ExperimentConfig& cfg, int run) {
  return derive_seed(cfg.seed, {0x72756eull, static_cast<std::uint64_t>(run)});
}
inline std::uint64_t adapter_seed_for(std::uint64_t run_seed) {
  return derive_seed(run_seed, {0x61646170ull});
}
inline std::uint64_t strategy_seed_for(std::uint64_t run_seed) {
  return derive_seed(run_seed, {0x71727973ull});
}

/// Train on the fully labeled pool to fix the 95%-threshold reference.
inline double compute_full_set_miou(const Dataset& pool, const Dataset& val,
                                    ModelAdapter& adapter, int threads) {
  std::vector<BitMask> all(pool.images.size(), BitMask(pool.height, pool.width, true));
  adapter.train(pool, all, 0);
  return evaluate_miou(adapter, val, threads);
}

/// Run R seeded repetitions to the iteration budget (or pool exhaustion),
/// checkpointing each round; emits results.csv and summary.json under
/// out_dir. Fully deterministic for a given (config, seed).
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool resume = false) {
  namespace fs = std::filesystem;
  if (cfg.repetitions < 1) throw usage_error("repetitions must be >= 1");
  if (cfg.iterations < 0) throw usage_error("iterations must be >= 0");
  if (cfg.m_q < 1) throw usage_error("m_q must be >= 1");
  const StrategyKind kind = parse_strategy(cfg.strategy);
  const int threads = resolve_threads(cfg.threads);

  const Dataset pool = load_dataset(cfg.pool_dir);
  const Dataset val = load_dataset(cfg.val_dir);
  if (cfg.b > pool.height || cfg.b > pool.width) throw usage_error("b exceeds image size");

  ExperimentResult result;
  {
    auto adapter = builtin_adapters(cfg.adapter, derive_seed(cfg.seed, {0x66756c6cull}),
                                    cfg.pred_dir);
    result.full_set_miou = cfg.full_set_miou ? *cfg.full_set_miou
                                             : compute_full_set_miou(pool, val, *adapter, threads);
  }

  for (int run = 0; run < cfg.repetitions; ++run) {
    const std::uint64_t run_seed = run_seed_for(cfg, run);
    const fs::path ckpt_dir = fs::path(cfg.out_dir) / ("run_" + std::to_string(run)) / "checkpoint";
    ALState state;
    if (resume && fs::exists(ckpt_dir / "state.json")) {
      state = load_checkpoint(ckpt_dir);
      if (state.image_ids.size() != pool.images.size())
        throw io_error("checkpoint does not match the pool dataset");
      for (std::size_t i = 0; i < pool.images.size(); ++i)
        if (state.image_ids[i] != pool.images[i].id)
          throw io_error("checkpoint does not match the pool dataset");
    } else {
      state = init_experiment(pool, cfg, run, run_seed);
      save_checkpoint(state, ckpt_dir);
    }

    auto adapter = builtin_adapters(cfg.adapter, adapter_seed_for(run_seed), cfg.pred_dir);
    const Strategy strategy{kind, strategy_seed_for(run_seed)};
    while (state.query_rounds < cfg.iterations &&
           state.iteration() == state.query_rounds) {
      if (!run_iteration(state, pool, val, *adapter, strategy, cfg, threads)) break;
      save_checkpoint(state, ckpt_dir);
    }
    if (state.iteration() == state.query_rounds) {
      // Terminal evaluation of the final labeled state.
      adapter->train(pool, state.labeled, state.query_rounds);
      detail::record_row(state, evaluate_miou(*adapter, val, threads));
      save_checkpoint(state, ckpt_dir);
    }
    result.rows.insert(result.rows.end(), state.history.begin(), state.history.end());
  }

  fs::create_directories(cfg.out_dir);
  save_file(fs::path(cfg.out_dir) / "results.csv",
            [&](std::ostream& os) { write_results_csv(result.rows, os); });
  nlohmann::json summary{{"full_set_miou", result.full_set_miou},
                         {"strategy", cfg.strategy},
                         {"adapter", cfg.adapter},
                         {"b", cfg.b},
                         {"stride", cfg.stride},
                         {"m_q", cfg.m_q},
                         {"m_init", cfg.m_init},
                         {"n_meta", cfg.n_meta},
                         {"epsilon", cfg.epsilon},
                         {"iterations", cfg.iterations},
                         {"repetitions", cfg.repetitions},
                         {"seed", cfg.seed}};
  save_file(fs::path(cfg.out_dir) / "summary.json",
            [&](std::ostream& os) { os << summary.dump(2) << "\n"; });
  return result;
}

// --- Result analysis (mean curves and the 95%-threshold table) ---

struct ThresholdCrossing {
  int iteration = 0;       // first iteration at or above the threshold
  double cost_at = 0.0;    // cost_a recorded at that iteration
  double cost_interp = 0.0;  // linear interpolation between bracketing points
};

/// First crossing of `target_miou` along one run's (cost_a, miou) trajectory.
inline std::optional<ThresholdCrossing> threshold_crossing(const std::vector<ResultRow>& run_rows,
                                                           double target_miou) {
  std::vector<ResultRow> rows = run_rows;
  std::sort(rows.begin(), rows.end(),
            [](const ResultRow& a, const ResultRow& b) { return a.iteration < b.iteration; });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].miou < target_miou) continue;
    ThresholdCrossing cross;
    cross.iteration = rows[i].iteration;
    cross.cost_at = rows[i].cost_a;
    if (i == 0 || rows[i].miou <= rows[i - 1].miou) {
      cross.cost_interp = rows[i].cost_a;
    } else {
      const double t = (target_miou - rows[i - 1].miou) / (rows[i].miou - rows[i - 1].miou);
      cross.cost_interp = rows[i - 1].cost_a + t * (rows[i].cost_a - rows[i - 1].cost_a);
    }
    return cross;
  }
  return std::nullopt;
}

struct MeanCurvePoint {
  std::string strategy;
  int iteration = 0;
  int runs = 0;
  double cost_a = 0.0;
  double cost_b = 0.0;
  double cost_p = 0.0;
  double miou = 0.0;
};

/// Per-iteration means over runs, grouped by strategy.
inline std::vector<MeanCurvePoint> mean_curves(const std::vector<ResultRow>& rows) {
  std::map<std::pair<std::string, int>, MeanCurvePoint> acc;
  for (const auto& r : rows) {
    auto& p = acc[{r.strategy, r.iteration}];
    p.strategy = r.strategy;
    p.iteration = r.iteration;
    ++p.runs;
    p.cost_a += r.cost_a;
    p.cost_b += r.cost_b;
    p.cost_p += r.cost_p;
    p.miou += r.miou;
  }
  std::vector<MeanCurvePoint> out;
  for (auto& [key, p] : acc) {
    p.cost_a /= p.runs;
    p.cost_b /= p.runs;
    p.cost_p /= p.runs;
    p.miou /= p.runs;
    out.push_back(p);
  }
  return out;
}

/// Mean interpolated cost_a over runs to reach the target mIoU; empty when
/// some run never crosses.
inline std::optional<double> mean_cost_to_reach(const std::vector<ResultRow>& rows,
                                                const std::string& strategy, double target_miou) {
  std::map<int, std::vector<ResultRow>> by_run;
  for (const auto& r : rows)
    if (r.strategy == strategy) by_run[r.run].push_back(r);
  if (by_run.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& [run, run_rows] : by_run) {
    const auto cross = threshold_crossing(run_rows, target_miou);
    if (!cross) return std::nullopt;
    sum += cross->cost_interp;
  }
  return sum / static_cast<double>(by_run.size());
}

}  // namespace boxquery
