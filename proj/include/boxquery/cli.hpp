#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "boxquery/alloop.hpp"

namespace boxquery {

namespace cli_detail {

inline std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir,
                                                     const std::string& extension) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw io_error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == extension)
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

struct SynthArgs {
  int pool = 0;
  int val = 1;
  int classes = 5;
  int size = 128;
  int shapes_min = 1;
  int shapes_max = 4;
  int vert_min = 3;
  int vert_max = 10;
  double color_noise = 0.08;
  std::uint64_t seed = 0;
  std::string out = "out";
};

inline int cmd_synth(const SynthArgs& a) {
  SceneSpec spec;
  spec.height = a.size;
  spec.width = a.size;
  spec.classes = a.classes;
  spec.shapes_min = a.shapes_min;
  spec.shapes_max = a.shapes_max;
  spec.vert_min = a.vert_min;
  spec.vert_max = a.vert_max;
  spec.color_noise = a.color_noise;
  spec.seed = a.seed;
  const DatasetStats stats = generate_dataset(spec, a.pool, a.val, a.out);
  std::cout << "wrote " << a.pool << " pool + " << a.val << " val scenes to " << a.out
            << " (pool clicks: c_p=" << stats.c_p << ", c_c=" << stats.c_c << ")\n";
  return 0;
}

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool resume = false;
  int threads = 0;
};

inline int cmd_run(const RunArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (a.threads > 0) cfg.threads = a.threads;
  const ExperimentResult result = run_experiment(cfg, a.resume);
  const double target = 0.95 * result.full_set_miou;
  std::cout << "strategy " << cfg.strategy << ": " << result.rows.size() << " rows -> "
            << (std::filesystem::path(cfg.out_dir) / "results.csv").string() << "\n";
  std::cout << "full-set mIoU " << format_g6(result.full_set_miou) << ", 95% target "
            << format_g6(target) << "\n";
  if (const auto cost = mean_cost_to_reach(result.rows, cfg.strategy, target))
    std::cout << "mean cost_A to reach 95% full-set mIoU: " << format_g6(*cost) << "%\n";
  else
    std::cout << "95% full-set mIoU not reached within the budget\n";
  return 0;
}

struct QueryArgs {
  std::string pmaps;
  std::string labeled;
  std::string meta_pmaps;
  std::string meta_masks;
  std::string meta_model_out;
  std::string polygons;
  std::string strategy = "EntropyBox";
  int b = 32;
  int stride = 1;
  int m_q = 10;
  double epsilon = 1.5;
  int iteration = 0;
  std::uint64_t seed = 0;
  std::string out = "out";
};

inline int cmd_query(const QueryArgs& a) {
  namespace fs = std::filesystem;
  const StrategyKind kind = parse_strategy(a.strategy);
  const auto pmap_files = list_files(a.pmaps, ".pmap");
  if (pmap_files.empty()) throw io_error("no .pmap files in " + a.pmaps);

  std::vector<std::string> ids;
  std::vector<ProbMap> probs;
  std::vector<BitMask> labeled;
  for (const auto& path : pmap_files) {
    ids.push_back(path.stem().string());
    probs.push_back(load_pmap(path));
    if (!a.labeled.empty()) {
      const fs::path mask_path = fs::path(a.labeled) / (ids.back() + ".pgm");
      if (fs::exists(mask_path)) {
        labeled.push_back(load_bitmask_pgm(mask_path));
        continue;
      }
    }
    labeled.push_back(BitMask(probs.back().height, probs.back().width, false));
  }

  std::map<std::string, std::vector<Polygon>> polys_by_image;
  if (strategy_uses_true_clicks(kind)) {
    if (a.polygons.empty())
      throw usage_error("strategy " + a.strategy + " needs --polygons (oracle costs)");
    std::ifstream is(a.polygons, std::ios::binary);
    if (!is) throw io_error("cannot open polygons: " + a.polygons);
    for (auto& poly : read_polygons_jsonl(is)) polys_by_image[poly.image_id].push_back(std::move(poly));
  }

  GbtRegressor meta_model;
  if (strategy_uses_metaseg(kind)) {
    if (a.meta_pmaps.empty() || a.meta_masks.empty())
      throw usage_error("strategy " + a.strategy + " needs --meta-pmaps and --meta-masks");
    std::vector<ProbMap> meta_probs;
    std::vector<SegMask> meta_gts;
    for (const auto& path : list_files(a.meta_pmaps, ".pmap")) {
      const fs::path gt_path = fs::path(a.meta_masks) / (path.stem().string() + ".pgm");
      meta_probs.push_back(load_pmap(path));
      meta_gts.push_back(load_mask_pgm(gt_path));
    }
    if (meta_probs.empty()) throw io_error("no .pmap files in " + a.meta_pmaps);
    std::vector<MetaImage> meta;
    for (std::size_t i = 0; i < meta_probs.size(); ++i)
      meta.push_back({&meta_probs[i], &meta_gts[i]});
    meta_model = metaseg_cycle(meta, {}).model;
    if (!a.meta_model_out.empty())
      save_file(a.meta_model_out,
                [&](std::ostream& os) { os << gbt_to_json(meta_model).dump(2) << "\n"; });
  }

  PriorityContext ctx;
  ctx.box_width = a.b;
  ctx.stride = a.stride;
  ctx.epsilon = a.epsilon;
  ctx.meta_model = strategy_uses_metaseg(kind) ? &meta_model : nullptr;
  ctx.seed = a.seed;
  ctx.iteration = a.iteration;
  const Strategy strategy{kind, a.seed};

  fs::create_directories(fs::path(a.out) / "heatmaps");
  std::vector<CandidateBox> candidates;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ImagePriorityInput input;
    input.id = ids[i];
    input.prob = &probs[i];
    input.labeled = &labeled[i];
    const auto poly_it = polys_by_image.find(ids[i]);
    input.polygons = poly_it != polys_by_image.end() ? &poly_it->second : nullptr;
    if (strategy_uses_true_clicks(kind) && !input.polygons)
      throw io_error("no polygons for image " + ids[i]);
    const ScalarMap priority = build_image_priority(strategy, ctx, input);
    save_heatmap_pgm(priority, fs::path(a.out) / "heatmaps" / (ids[i] + ".pgm"));
    auto boxes = build_candidates(priority, ids[i], a.b, a.stride);
    candidates.insert(candidates.end(), boxes.begin(), boxes.end());
  }

  const auto selected = select_query(candidates, a.m_q);
  save_file(fs::path(a.out) / "queries.jsonl", [&](std::ostream& os) {
    for (const auto& box : selected) {
      os << "{\"image_id\": " << nlohmann::json(box.image_id).dump() << ", \"row\": " << box.row
         << ", \"col\": " << box.col << ", \"b\": " << box.width
         << ", \"score\": " << format_g6(box.score)
         << ", \"strategy\": " << nlohmann::json(a.strategy).dump()
         << ", \"iteration\": " << a.iteration << "}\n";
    }
  });
  std::cout << "selected " << selected.size() << " boxes -> "
            << (fs::path(a.out) / "queries.jsonl").string() << "\n";
  return 0;
}

struct ClicksArgs {
  std::string masks;
  std::string polygons;
  double epsilon = 1.5;
  std::uint64_t seed = 0;  // accepted for interface uniformity; unused
  std::string out;
};

inline int cmd_clicks(const ClicksArgs& a) {
  namespace fs = std::filesystem;
  std::map<std::string, std::int64_t> true_clicks;
  {
    std::ifstream is(a.polygons, std::ios::binary);
    if (!is) throw io_error("cannot open polygons: " + a.polygons);
    for (const auto& poly : read_polygons_jsonl(is))
      true_clicks[poly.image_id] += static_cast<std::int64_t>(poly.vertices.size());
  }
  std::ostringstream csv;
  csv << "image_id,estimated,true\n";
  std::int64_t total_est = 0, total_true = 0;
  for (const auto& path : list_files(a.masks, ".pgm")) {
    const std::string id = path.stem().string();
    const SegMask mask = load_mask_pgm(path);
    const ScalarMap kappa = click_cost_map(mask, a.epsilon);
    std::int64_t est_full = 0;
    for (auto v : kappa.values) est_full += v > 0.5f ? 1 : 0;
    const std::int64_t truth = true_clicks.count(id) ? true_clicks.at(id) : 0;
    csv << id << "," << est_full << "," << truth << "\n";
    total_est += est_full;
    total_true += truth;
  }
  csv << "TOTAL," << total_est << "," << total_true << "\n";
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    save_file(a.out, [&](std::ostream& os) { os << csv.str(); });
    std::cout << "estimated " << total_est << " vs true " << total_true << " clicks -> " << a.out
              << "\n";
  }
  return 0;
}

struct EvalArgs {
  std::string pred;
  std::string gt;
};

inline int cmd_eval(const EvalArgs& a) {
  namespace fs = std::filesystem;
  IouAccumulator acc;
  int n = 0;
  for (const auto& path : list_files(a.pred, ".pgm")) {
    const fs::path gt_path = fs::path(a.gt) / path.filename();
    if (!fs::exists(gt_path)) throw io_error("missing ground truth: " + gt_path.string());
    acc.add(load_mask_pgm(path), load_mask_pgm(gt_path));
    ++n;
  }
  if (n == 0) throw io_error("no .pgm masks in " + a.pred);
  std::cout << "miou " << format_g6(acc.mean_iou()) << " over " << n << " images\n";
  return 0;
}

struct ReportArgs {
  std::string in;
  std::vector<std::string> results;
  std::optional<double> full_set_miou;
  double threshold = 0.95;
  std::string out = "report";
};

inline int cmd_report(const ReportArgs& a) {
  namespace fs = std::filesystem;
  std::vector<fs::path> csvs;
  for (const auto& r : a.results) csvs.emplace_back(r);
  if (!a.in.empty()) {
    for (const auto& entry : fs::recursive_directory_iterator(a.in))
      if (entry.is_regular_file() && entry.path().filename() == "results.csv")
        csvs.push_back(entry.path());
    std::sort(csvs.begin(), csvs.end());
  }
  if (csvs.empty()) throw usage_error("report: no results files (use --in or --results)");

  std::vector<ResultRow> rows;
  std::optional<double> full = a.full_set_miou;
  for (const auto& path : csvs) {
    auto file_rows = load_file(path, [](std::istream& is) { return read_results_csv(is); });
    rows.insert(rows.end(), file_rows.begin(), file_rows.end());
    if (!full) {
      const fs::path summary = path.parent_path() / "summary.json";
      if (fs::exists(summary)) {
        nlohmann::json j;
        std::ifstream is(summary);
        is >> j;
        if (j.contains("full_set_miou")) full = j["full_set_miou"].get<double>();
      }
    }
  }
  if (!full)
    throw usage_error("report: full-set mIoU unknown (pass --full-set-miou or keep summary.json)");
  const double target = a.threshold * *full;

  fs::create_directories(a.out);
  save_file(fs::path(a.out) / "mean_curves.csv", [&](std::ostream& os) {
    os << "strategy,iteration,runs,cost_a,cost_b,cost_p,miou\n";
    for (const auto& p : mean_curves(rows)) {
      os << p.strategy << "," << p.iteration << "," << p.runs << "," << format_g6(p.cost_a) << ","
         << format_g6(p.cost_b) << "," << format_g6(p.cost_p) << "," << format_g6(p.miou) << "\n";
    }
  });

  std::map<std::string, std::map<int, std::vector<ResultRow>>> by_strategy_run;
  for (const auto& r : rows) by_strategy_run[r.strategy][r.run].push_back(r);
  std::ostringstream table;
  table << "strategy,run,iteration,cost_a_at,cost_a_interp\n";
  std::cout << "cost_A to reach " << format_g6(100.0 * a.threshold) << "% of full-set mIoU ("
            << format_g6(target) << "):\n";
  for (const auto& [strategy, runs] : by_strategy_run) {
    double sum_interp = 0.0;
    int crossed = 0;
    for (const auto& [run, run_rows] : runs) {
      const auto cross = threshold_crossing(run_rows, target);
      if (cross) {
        table << strategy << "," << run << "," << cross->iteration << ","
              << format_g6(cross->cost_at) << "," << format_g6(cross->cost_interp) << "\n";
        sum_interp += cross->cost_interp;
        ++crossed;
      } else {
        table << strategy << "," << run << ",,,\n";
      }
    }
    if (crossed == static_cast<int>(runs.size())) {
      const double mean = sum_interp / crossed;
      table << strategy << ",mean,," << "," << format_g6(mean) << "\n";
      std::cout << "  " << strategy << ": " << format_g6(mean) << "% (mean of " << crossed
                << " runs)\n";
    } else {
      std::cout << "  " << strategy << ": not reached in " << (runs.size() - crossed) << "/"
                << runs.size() << " runs\n";
    }
  }
  save_file(fs::path(a.out) / "threshold_table.csv",
            [&](std::ostream& os) { os << table.str(); });
  return 0;
}

}  // namespace cli_detail

/// Entry point behind the boxquery binary. Exit codes: 0 success, 1 usage
/// error, 2 data error.
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"region-based active-learning acquisition engine for semantic segmentation"};
  app.require_subcommand(1);

  cli_detail::SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic pool + validation dataset");
  synth_cmd->add_option("--pool", synth.pool, "number of pool images")->required();
  synth_cmd->add_option("--val", synth.val, "number of validation images");
  synth_cmd->add_option("--classes", synth.classes, "class count incl. background");
  synth_cmd->add_option("--size", synth.size, "square image size in pixels");
  synth_cmd->add_option("--shapes-min", synth.shapes_min, "min shapes per image");
  synth_cmd->add_option("--shapes-max", synth.shapes_max, "max shapes per image");
  synth_cmd->add_option("--vert-min", synth.vert_min, "min vertices per shape");
  synth_cmd->add_option("--vert-max", synth.vert_max, "max vertices per shape");
  synth_cmd->add_option("--color-noise", synth.color_noise, "color noise std (fraction of range)");
  synth_cmd->add_option("--seed", synth.seed, "master seed");
  synth_cmd->add_option("--out", synth.out, "output directory");

  cli_detail::RunArgs run;
  std::uint64_t run_seed_value = 0;
  CLI::App* run_cmd = app.add_subcommand("run", "run a simulated active-learning experiment");
  run_cmd->add_option("--config", run.config, "experiment config (key=value lines)")->required();
  CLI::Option* run_seed_opt = run_cmd->add_option("--seed", run_seed_value, "override config seed");
  run_cmd->add_option("--out", run.out, "override config out_dir");
  run_cmd->add_flag("--resume", run.resume, "resume from checkpoints in out_dir");
  run_cmd->add_option("--threads", run.threads, "worker threads (or BOXQUERY_THREADS)");

  cli_detail::QueryArgs query;
  CLI::App* query_cmd =
      app.add_subcommand("query", "one-shot acquisition from a directory of PMAP predictions");
  query_cmd->add_option("--pmaps", query.pmaps, "directory of <id>.pmap predictions")->required();
  query_cmd->add_option("--labeled", query.labeled, "directory of <id>.pgm labeled-pixel masks");
  query_cmd->add_option("--meta-pmaps", query.meta_pmaps, "MetaSeg set predictions (.pmap)");
  query_cmd->add_option("--meta-masks", query.meta_masks, "MetaSeg set ground truth (.pgm)");
  query_cmd->add_option("--meta-model-out", query.meta_model_out, "save fitted regressor JSON");
  query_cmd->add_option("--polygons", query.polygons, "ground-truth polygons (oracle-cost kinds)");
  query_cmd->add_option("--strategy", query.strategy, "query strategy")->required();
  query_cmd->add_option("--b", query.b, "box width")->required();
  query_cmd->add_option("--stride", query.stride, "anchor stride");
  query_cmd->add_option("--m-q", query.m_q, "boxes to query");
  query_cmd->add_option("--epsilon", query.epsilon, "RDP epsilon");
  query_cmd->add_option("--iteration", query.iteration, "iteration tag for the output");
  query_cmd->add_option("--seed", query.seed, "seed (random strategy)");
  query_cmd->add_option("--out", query.out, "output directory");

  cli_detail::ClicksArgs clicks;
  CLI::App* clicks_cmd =
      app.add_subcommand("clicks", "RDP click estimate vs true clicks for given masks/polygons");
  clicks_cmd->add_option("--masks", clicks.masks, "directory of <id>.pgm masks")->required();
  clicks_cmd->add_option("--polygons", clicks.polygons, "ground-truth polygons JSONL")->required();
  clicks_cmd->add_option("--epsilon", clicks.epsilon, "RDP epsilon");
  clicks_cmd->add_option("--seed", clicks.seed, "seed (unused; uniform interface)");
  clicks_cmd->add_option("--out", clicks.out, "output CSV path (default: stdout)");

  cli_detail::EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "dataset-level mIoU of prediction masks");
  eval_cmd->add_option("--pred", eval.pred, "directory of predicted masks (.pgm)")->required();
  eval_cmd->add_option("--gt", eval.gt, "directory of ground-truth masks (.pgm)")->required();

  cli_detail::ReportArgs report;
  CLI::App* report_cmd =
      app.add_subcommand("report", "aggregate results CSVs into mean curves and the 95% table");
  report_cmd->add_option("--in", report.in, "directory tree containing results.csv files");
  report_cmd->add_option("--results", report.results, "explicit results CSV paths");
  double report_full = 0.0;
  CLI::Option* report_full_opt =
      report_cmd->add_option("--full-set-miou", report_full, "full-set mIoU reference");
  report_cmd->add_option("--threshold", report.threshold, "fraction of full-set mIoU");
  report_cmd->add_option("--out", report.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (run_seed_opt->count() > 0) run.seed = run_seed_value;
    if (report_full_opt->count() > 0) report.full_set_miou = report_full;
    if (synth_cmd->parsed()) return cli_detail::cmd_synth(synth);
    if (run_cmd->parsed()) return cli_detail::cmd_run(run);
    if (query_cmd->parsed()) return cli_detail::cmd_query(query);
    if (clicks_cmd->parsed()) return cli_detail::cmd_clicks(clicks);
    if (eval_cmd->parsed()) return cli_detail::cmd_eval(eval);
    if (report_cmd->parsed()) return cli_detail::cmd_report(report);
    return 1;
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace boxquery
