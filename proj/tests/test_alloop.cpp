#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "boxquery/alloop.hpp"
#include "helpers.hpp"

using namespace boxquery;
using testutil::TmpDir;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

/// Small synthetic dataset shared by the loop tests.
struct Fixture {
  TmpDir tmp{"alloop"};
  ExperimentConfig cfg;

  explicit Fixture(int classes = 3, int pool = 8, int val = 2, int size = 32,
                   std::uint64_t seed = 11) {
    SceneSpec spec;
    spec.height = size;
    spec.width = size;
    spec.classes = classes;
    spec.shapes_min = 1;
    spec.shapes_max = 3;
    spec.seed = seed;
    generate_dataset(spec, pool, val, tmp.path());
    cfg.pool_dir = (tmp.path() / "pool").string();
    cfg.val_dir = (tmp.path() / "val").string();
    cfg.out_dir = (tmp.path() / "out").string();
    cfg.b = 8;
    cfg.stride = 4;
    cfg.m_q = 4;
    cfg.m_init = 2;
    cfg.n_meta = 2;
    cfg.iterations = 2;
    cfg.repetitions = 1;
    cfg.seed = 7;
    cfg.adapter = "noisy_oracle";
    cfg.strategy = "EntropyBox";
  }
};

}  // namespace

TEST_CASE("config parser reads every key and rejects unknown ones", "[alloop]") {
  std::istringstream is(
      "# experiment\n"
      "pool_dir = data/pool\n"
      "val_dir = data/val\n"
      "strategy = MetaBox+\n"
      "b = 64\n"
      "stride = 16\n"
      "m_q = 12\n"
      "m_init = 3\n"
      "n_meta = 4\n"
      "epsilon = 2.5\n"
      "iterations = 9\n"
      "repetitions = 2\n"
      "seed = 1234\n"
      "adapter = pixel_classifier\n"
      "full_set_miou = 0.875\n"
      "out_dir = results\n"
      "threads = 2\n");
  const ExperimentConfig cfg = parse_config(is);
  REQUIRE(cfg.pool_dir == "data/pool");
  REQUIRE(cfg.strategy == "MetaBox+");
  REQUIRE(cfg.b == 64);
  REQUIRE(cfg.stride == 16);
  REQUIRE(cfg.m_q == 12);
  REQUIRE(cfg.m_init == 3);
  REQUIRE(cfg.n_meta == 4);
  REQUIRE(cfg.epsilon == 2.5);
  REQUIRE(cfg.iterations == 9);
  REQUIRE(cfg.repetitions == 2);
  REQUIRE(cfg.seed == 1234);
  REQUIRE(cfg.adapter == "pixel_classifier");
  REQUIRE(cfg.full_set_miou.has_value());
  REQUIRE(*cfg.full_set_miou == 0.875);
  REQUIRE(cfg.out_dir == "results");
  REQUIRE(cfg.threads == 2);

  std::istringstream bad("bogus_key = 3\n");
  REQUIRE_THROWS_AS(parse_config(bad), usage_error);
  std::istringstream no_eq("pool_dir data\n");
  REQUIRE_THROWS_AS(parse_config(no_eq), usage_error);
}

TEST_CASE("dataset loads images, masks, polygons and stats", "[alloop]") {
  Fixture fx;
  const Dataset pool = load_dataset(fx.cfg.pool_dir);
  REQUIRE(pool.images.size() == 8);
  REQUIRE(pool.height == 32);
  REQUIRE(pool.classes == 3);
  REQUIRE(pool.pool_cp > 0);
  REQUIRE(pool.pool_cc >= 8);
  for (const auto& img : pool.images) {
    REQUIRE(!img.polygons.empty());
    REQUIRE(img.polygons[0].cls == 0);  // border polygon first
  }
}

TEST_CASE("noisy oracle reproduces ground truth once everything is labeled", "[alloop]") {
  Fixture fx;
  const Dataset pool = load_dataset(fx.cfg.pool_dir);
  const Dataset val = load_dataset(fx.cfg.val_dir);
  NoisyOracleAdapter adapter(123);
  std::vector<BitMask> all(pool.images.size(), BitMask(pool.height, pool.width, true));
  adapter.train(pool, all, 0);
  REQUIRE(evaluate_miou(adapter, val, 1) == Catch::Approx(1.0));

  // with nothing labeled, predictions are heavily corrupted
  std::vector<BitMask> none(pool.images.size(), BitMask(pool.height, pool.width, false));
  adapter.train(pool, none, 0);
  REQUIRE(evaluate_miou(adapter, val, 1) < 0.9);
}

TEST_CASE("pixel classifier separates color-coded classes", "[alloop]") {
  Fixture fx(/*classes=*/2, /*pool=*/4, /*val=*/2, /*size=*/48, /*seed=*/3);
  const Dataset pool = load_dataset(fx.cfg.pool_dir);
  const Dataset val = load_dataset(fx.cfg.val_dir);
  PixelClassifierAdapter adapter;
  std::vector<BitMask> all(pool.images.size(), BitMask(pool.height, pool.width, true));
  adapter.train(pool, all, 0);
  std::int64_t labeled_per_class = 0;
  for (const auto& img : pool.images)
    for (auto v : img.gt.ids) labeled_per_class += v == 1 ? 1 : 0;
  REQUIRE(labeled_per_class >= 100);
  REQUIRE(evaluate_miou(adapter, val, 1) > 0.9);
}

TEST_CASE("pixel classifier probabilities are valid and degrade gracefully", "[alloop]") {
  Fixture fx;
  const Dataset pool = load_dataset(fx.cfg.pool_dir);
  PixelClassifierAdapter adapter;
  std::vector<BitMask> some(pool.images.size(), BitMask(pool.height, pool.width, false));
  some[0] = BitMask(pool.height, pool.width, true);
  adapter.train(pool, some, 0);
  const ProbMap p = adapter.predict(pool.images[1]);
  for (int r = 0; r < p.height; ++r) {
    for (int c = 0; c < p.width; ++c) {
      double sum = 0.0;
      for (int k = 0; k < p.classes; ++k) {
        REQUIRE(p.at(r, c, k) >= 0.0f);
        sum += p.at(r, c, k);
      }
      REQUIRE(sum == Catch::Approx(1.0).margin(1e-3));
    }
  }
}

TEST_CASE("file adapter round-trips ProbMaps bit-identically", "[alloop]") {
  Fixture fx;
  const Dataset pool = load_dataset(fx.cfg.pool_dir);
  Rng rng(9);
  const ProbMap original = testutil::random_probmap(rng, pool.height, pool.width, 3);
  const auto pred_dir = fx.tmp.path() / "preds";
  std::filesystem::create_directories(pred_dir / "iter_0");
  save_pmap(original, pred_dir / "iter_0" / (pool.images[0].id + ".pmap"));

  FileAdapter adapter(pred_dir);
  adapter.train(pool, {}, 0);
  const ProbMap read_back = adapter.predict(pool.images[0]);
  REQUIRE(read_back.values == original.values);
  REQUIRE_THROWS_AS(adapter.predict(pool.images[1]), io_error);
}

TEST_CASE("init_experiment labels L0 and M and charges their clicks", "[alloop]") {
  Fixture fx;
  fx.cfg.strategy = "MetaBox+";
  const Dataset pool = load_dataset(fx.cfg.pool_dir);
  const ALState state = init_experiment(pool, fx.cfg, 0, run_seed_for(fx.cfg, 0));

  int fully = 0, meta = 0;
  std::int64_t expected_cp = 0, expected_cc = 0;
  for (std::size_t i = 0; i < pool.images.size(); ++i) {
    if (state.in_init[i]) {
      ++fully;
      REQUIRE(state.labeled[i].count_set() == 32 * 32);
      for (const auto& poly : pool.images[i].polygons)
        expected_cp += static_cast<std::int64_t>(poly.vertices.size());
      expected_cc += pool.gt_components(i).count;
    } else {
      REQUIRE(state.labeled[i].count_set() == 0);
    }
    meta += state.in_meta[i];
  }
  REQUIRE(fully == 4);  // m_init 2 + n_meta 2
  REQUIRE(meta == 2);
  REQUIRE(state.ledger.init_cp == expected_cp);
  REQUIRE(state.ledger.init_cc == expected_cc);
  REQUIRE(state.ledger.labeled_pixels == 4 * 32 * 32);
  REQUIRE(state.ledger.pool_cp == pool.pool_cp);

  // same seed, same sample
  const ALState again = init_experiment(pool, fx.cfg, 0, run_seed_for(fx.cfg, 0));
  REQUIRE(again.in_init == state.in_init);
  REQUIRE(again.in_meta == state.in_meta);

  // non-MetaSeg strategies take no meta set
  fx.cfg.strategy = "EntropyBox";
  const ALState plain = init_experiment(pool, fx.cfg, 0, run_seed_for(fx.cfg, 0));
  int plain_fully = 0;
  for (auto v : plain.in_init) plain_fully += v;
  REQUIRE(plain_fully == 2);

  fx.cfg.m_init = 9;
  REQUIRE_THROWS_AS(init_experiment(pool, fx.cfg, 0, 1), usage_error);
}

TEST_CASE("run_iteration records one row and annotates within budget", "[alloop]") {
  Fixture fx;
  const Dataset pool = load_dataset(fx.cfg.pool_dir);
  const Dataset val = load_dataset(fx.cfg.val_dir);
  const std::uint64_t run_seed = run_seed_for(fx.cfg, 0);
  ALState state = init_experiment(pool, fx.cfg, 0, run_seed);
  auto adapter = builtin_adapters(fx.cfg.adapter, adapter_seed_for(run_seed), "");
  const Strategy strategy{parse_strategy(fx.cfg.strategy), strategy_seed_for(run_seed)};

  const std::int64_t labeled_before = state.ledger.labeled_pixels;
  REQUIRE(run_iteration(state, pool, val, *adapter, strategy, fx.cfg));
  REQUIRE(state.history.size() == 1);
  REQUIRE(state.query_rounds == 1);
  const std::int64_t gained = state.ledger.labeled_pixels - labeled_before;
  REQUIRE(gained > 0);
  REQUIRE(gained <= static_cast<std::int64_t>(fx.cfg.m_q) * fx.cfg.b * fx.cfg.b);

  // ledger pixel accounting matches the masks exactly (no pixel counted twice)
  std::int64_t mask_total = 0;
  for (const auto& m : state.labeled) mask_total += m.count_set();
  REQUIRE(mask_total == state.ledger.labeled_pixels);

  // costs recorded in the row reflect the pre-annotation ledger
  REQUIRE(state.history[0].iteration == 0);
  REQUIRE(state.history[0].c_p == state.ledger.init_cp);
}

TEST_CASE("labeled pixels increase strictly while unlabeled data remains", "[alloop]") {
  Fixture fx;
  fx.cfg.strategy = "RandomBox";
  const Dataset pool = load_dataset(fx.cfg.pool_dir);
  const Dataset val = load_dataset(fx.cfg.val_dir);
  const std::uint64_t run_seed = run_seed_for(fx.cfg, 0);
  ALState state = init_experiment(pool, fx.cfg, 0, run_seed);
  auto adapter = builtin_adapters(fx.cfg.adapter, adapter_seed_for(run_seed), "");
  const Strategy strategy{StrategyKind::random, strategy_seed_for(run_seed)};
  ExperimentConfig cfg = fx.cfg;
  cfg.iterations = 50;

  std::int64_t prev = state.ledger.labeled_pixels;
  const std::int64_t total = state.ledger.total_pixels;
  while (state.query_rounds < cfg.iterations) {
    if (!run_iteration(state, pool, val, *adapter, strategy, cfg)) break;
    if (prev < total) REQUIRE(state.ledger.labeled_pixels > prev);
    prev = state.ledger.labeled_pixels;
  }
  REQUIRE(state.ledger.labeled_pixels == total);  // pool exhausted
}

TEST_CASE("checkpoints round trip bit-identically", "[alloop]") {
  Fixture fx;
  const Dataset pool = load_dataset(fx.cfg.pool_dir);
  const Dataset val = load_dataset(fx.cfg.val_dir);
  const std::uint64_t run_seed = run_seed_for(fx.cfg, 0);
  ALState state = init_experiment(pool, fx.cfg, 0, run_seed);
  auto adapter = builtin_adapters(fx.cfg.adapter, adapter_seed_for(run_seed), "");
  const Strategy strategy{parse_strategy(fx.cfg.strategy), strategy_seed_for(run_seed)};
  run_iteration(state, pool, val, *adapter, strategy, fx.cfg);

  const auto dir = fx.tmp.path() / "ckpt";
  save_checkpoint(state, dir);
  const ALState restored = load_checkpoint(dir);
  REQUIRE(restored.query_rounds == state.query_rounds);
  REQUIRE(restored.image_ids == state.image_ids);
  REQUIRE(restored.in_init == state.in_init);
  REQUIRE(restored.in_meta == state.in_meta);
  REQUIRE(restored.ledger.labeled_pixels == state.ledger.labeled_pixels);
  REQUIRE(restored.history.size() == state.history.size());
  for (std::size_t i = 0; i < state.labeled.size(); ++i)
    REQUIRE(restored.labeled[i].bits == state.labeled[i].bits);
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    REQUIRE(restored.history[i].cost_a == state.history[i].cost_a);
    REQUIRE(restored.history[i].miou == state.history[i].miou);
  }
}

TEST_CASE("resume after an interruption reproduces the uninterrupted run", "[alloop]") {
  Fixture fx;
  fx.cfg.iterations = 3;
  fx.cfg.strategy = "MetaBox+";

  // uninterrupted reference
  ExperimentConfig full_cfg = fx.cfg;
  full_cfg.out_dir = (fx.tmp.path() / "full").string();
  run_experiment(full_cfg);
  const std::string reference = slurp(std::filesystem::path(full_cfg.out_dir) / "results.csv");

  // interrupted: replay two rounds by hand exactly as the driver would,
  // checkpoint, then resume
  ExperimentConfig resumed_cfg = fx.cfg;
  resumed_cfg.out_dir = (fx.tmp.path() / "resumed").string();
  {
    const Dataset pool = load_dataset(fx.cfg.pool_dir);
    const Dataset val = load_dataset(fx.cfg.val_dir);
    const std::uint64_t run_seed = run_seed_for(resumed_cfg, 0);
    ALState state = init_experiment(pool, resumed_cfg, 0, run_seed);
    auto adapter = builtin_adapters(resumed_cfg.adapter, adapter_seed_for(run_seed), "");
    const Strategy strategy{parse_strategy(resumed_cfg.strategy), strategy_seed_for(run_seed)};
    run_iteration(state, pool, val, *adapter, strategy, resumed_cfg);
    run_iteration(state, pool, val, *adapter, strategy, resumed_cfg);
    save_checkpoint(state,
                    std::filesystem::path(resumed_cfg.out_dir) / "run_0" / "checkpoint");
  }
  run_experiment(resumed_cfg, /*resume=*/true);
  const std::string resumed = slurp(std::filesystem::path(resumed_cfg.out_dir) / "results.csv");
  REQUIRE(resumed == reference);
}

TEST_CASE("identical configs give byte-identical results", "[alloop]") {
  Fixture fx;
  fx.cfg.strategy = "MetaBox";
  ExperimentConfig a = fx.cfg;
  a.out_dir = (fx.tmp.path() / "a").string();
  ExperimentConfig b = fx.cfg;
  b.out_dir = (fx.tmp.path() / "b").string();
  run_experiment(a);
  run_experiment(b);
  REQUIRE(slurp(std::filesystem::path(a.out_dir) / "results.csv") ==
          slurp(std::filesystem::path(b.out_dir) / "results.csv"));
}

TEST_CASE("zero-iteration budget emits exactly the init row per run", "[alloop]") {
  Fixture fx;
  fx.cfg.iterations = 0;
  fx.cfg.repetitions = 2;
  const ExperimentResult result = run_experiment(fx.cfg);
  REQUIRE(result.rows.size() == 2);
  REQUIRE(result.rows[0].iteration == 0);
  REQUIRE(result.rows[1].iteration == 0);
  REQUIRE(result.rows[0].run == 0);
  REQUIRE(result.rows[1].run == 1);
  // distinct L0 samples across runs almost surely differ in cost
  REQUIRE((result.rows[0].cost_a != result.rows[1].cost_a ||
           result.rows[0].miou != result.rows[1].miou));
}

TEST_CASE("run_experiment validates strategy and adapter names", "[alloop]") {
  Fixture fx;
  fx.cfg.strategy = "NoSuchBox";
  REQUIRE_THROWS_AS(run_experiment(fx.cfg), usage_error);
  fx.cfg.strategy = "RandomBox";
  fx.cfg.adapter = "mystery";
  REQUIRE_THROWS_AS(run_experiment(fx.cfg), usage_error);
}

TEST_CASE("threshold crossing interpolates between bracketing iterations", "[alloop]") {
  std::vector<ResultRow> rows(3);
  rows[0] = {0, 0, "s", 10.0, 0, 0, 0.5, 0, 0, 0, 0};
  rows[1] = {1, 0, "s", 20.0, 0, 0, 0.8, 0, 0, 0, 0};
  rows[2] = {2, 0, "s", 30.0, 0, 0, 0.9, 0, 0, 0, 0};
  const auto cross = threshold_crossing(rows, 0.85);
  REQUIRE(cross.has_value());
  REQUIRE(cross->iteration == 2);
  REQUIRE(cross->cost_at == 30.0);
  REQUIRE(cross->cost_interp == Catch::Approx(25.0));

  REQUIRE(!threshold_crossing(rows, 0.95).has_value());
  const auto immediate = threshold_crossing(rows, 0.4);
  REQUIRE(immediate->iteration == 0);
  REQUIRE(immediate->cost_interp == 10.0);
}

TEST_CASE("mean curves average rows per strategy and iteration", "[alloop]") {
  std::vector<ResultRow> rows(4);
  rows[0] = {0, 0, "A", 10.0, 0, 0, 0.5, 0, 0, 0, 0};
  rows[1] = {0, 1, "A", 20.0, 0, 0, 0.7, 0, 0, 0, 0};
  rows[2] = {1, 0, "A", 30.0, 0, 0, 0.9, 0, 0, 0, 0};
  rows[3] = {0, 0, "B", 5.0, 0, 0, 0.4, 0, 0, 0, 0};
  const auto curves = mean_curves(rows);
  REQUIRE(curves.size() == 3);
  const auto& a0 = curves[0];
  REQUIRE(a0.strategy == "A");
  REQUIRE(a0.iteration == 0);
  REQUIRE(a0.runs == 2);
  REQUIRE(a0.cost_a == Catch::Approx(15.0));
  REQUIRE(a0.miou == Catch::Approx(0.6));

  const auto mean_cost = mean_cost_to_reach(rows, "A", 0.8);
  REQUIRE(!mean_cost.has_value());  // run 1 never crosses
}
