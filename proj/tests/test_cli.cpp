#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "boxquery/cli.hpp"
#include "helpers.hpp"

using namespace boxquery;
using testutil::TmpDir;

namespace {

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"boxquery"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("synth smoke: pool and val scenes plus manifests", "[cli]") {
  TmpDir tmp("cli_synth");
  const std::string out = (tmp.path() / "data").string();
  REQUIRE(cli({"synth", "--pool", "6", "--val", "2", "--classes", "5", "--size", "48", "--seed",
               "7", "--out", out}) == 0);
  REQUIRE(std::filesystem::exists(tmp.path() / "data" / "pool" / "manifest.txt"));
  REQUIRE(std::filesystem::exists(tmp.path() / "data" / "val" / "images" / "val_00001.ppm"));
  REQUIRE(std::filesystem::exists(tmp.path() / "data" / "pool" / "stats.json"));
}

TEST_CASE("help exits zero and unknown flags exit one", "[cli]") {
  REQUIRE(cli({"--help"}) == 0);
  REQUIRE(cli({"synth", "--help"}) == 0);
  REQUIRE(cli({"synth", "--pool", "1", "--what", "3"}) == 1);
  REQUIRE(cli({"nonsense"}) == 1);
}

TEST_CASE("run rejects a bad strategy name with the valid list", "[cli]") {
  TmpDir tmp("cli_badstrat");
  const std::string out = (tmp.path() / "data").string();
  REQUIRE(cli({"synth", "--pool", "4", "--val", "1", "--size", "32", "--out", out}) == 0);
  const auto cfg_path = tmp.path() / "exp.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "pool_dir = " << out << "/pool\n"
        << "val_dir = " << out << "/val\n"
        << "strategy = FancyBox\n"
        << "adapter = noisy_oracle\n"
        << "b = 8\nstride = 8\nm_q = 2\nm_init = 1\niterations = 1\n"
        << "out_dir = " << (tmp.path() / "run_out").string() << "\n";
  }
  REQUIRE(cli({"run", "--config", cfg_path.string()}) == 1);
  REQUIRE(cli({"run", "--config", (tmp.path() / "missing.cfg").string()}) == 1);
}

TEST_CASE("run executes a small experiment deterministically", "[cli]") {
  TmpDir tmp("cli_run");
  const std::string out = (tmp.path() / "data").string();
  REQUIRE(cli({"synth", "--pool", "6", "--val", "2", "--size", "32", "--seed", "3", "--out",
               out}) == 0);
  const auto cfg_path = tmp.path() / "exp.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "pool_dir = " << out << "/pool\n"
        << "val_dir = " << out << "/val\n"
        << "strategy = EntropyBox+\n"
        << "adapter = noisy_oracle\n"
        << "b = 8\nstride = 4\nm_q = 3\nm_init = 2\nn_meta = 0\niterations = 2\n"
        << "repetitions = 1\nseed = 5\n"
        << "out_dir = " << (tmp.path() / "out_a").string() << "\n";
  }
  REQUIRE(cli({"run", "--config", cfg_path.string()}) == 0);
  REQUIRE(cli({"run", "--config", cfg_path.string(), "--out",
               (tmp.path() / "out_b").string()}) == 0);
  REQUIRE(slurp(tmp.path() / "out_a" / "results.csv") ==
          slurp(tmp.path() / "out_b" / "results.csv"));

  // report over the finished run
  REQUIRE(cli({"report", "--in", (tmp.path() / "out_a").string(), "--out",
               (tmp.path() / "report").string()}) == 0);
  REQUIRE(std::filesystem::exists(tmp.path() / "report" / "mean_curves.csv"));
  REQUIRE(std::filesystem::exists(tmp.path() / "report" / "threshold_table.csv"));
}

TEST_CASE("query emits deterministic JSONL and heatmaps from PMAP files", "[cli]") {
  TmpDir tmp("cli_query");
  const auto pmap_dir = tmp.path() / "pmaps";
  std::filesystem::create_directories(pmap_dir);
  Rng rng(40);
  for (int i = 0; i < 3; ++i) {
    const ProbMap p = testutil::random_probmap(rng, 24, 24, 4);
    save_pmap(p, pmap_dir / ("img_" + std::to_string(i) + ".pmap"));
  }
  const std::string out_a = (tmp.path() / "qa").string();
  const std::string out_b = (tmp.path() / "qb").string();
  const std::vector<std::string> base = {"query",     "--pmaps", pmap_dir.string(),
                                         "--strategy", "EntropyBox+", "--b",
                                         "8",         "--stride", "4",
                                         "--m-q",     "5",       "--seed",
                                         "9"};
  auto with_out = [&](const std::string& out) {
    auto args = base;
    args.push_back("--out");
    args.push_back(out);
    return args;
  };
  REQUIRE(cli(with_out(out_a)) == 0);
  REQUIRE(cli(with_out(out_b)) == 0);
  REQUIRE(slurp(std::filesystem::path(out_a) / "queries.jsonl") ==
          slurp(std::filesystem::path(out_b) / "queries.jsonl"));
  REQUIRE(std::filesystem::exists(std::filesystem::path(out_a) / "heatmaps" / "img_0.pgm"));

  // the query JSONL schema round-trips through the json parser
  std::istringstream lines(slurp(std::filesystem::path(out_a) / "queries.jsonl"));
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    REQUIRE(j.contains("image_id"));
    REQUIRE(j.contains("row"));
    REQUIRE(j.contains("col"));
    REQUIRE(j.contains("b"));
    REQUIRE(j.contains("score"));
    REQUIRE(j["strategy"] == "EntropyBox+");
    REQUIRE(j["iteration"] == 0);
    ++count;
  }
  REQUIRE(count == 5);

  // MetaBox without a meta set is a usage error
  REQUIRE(cli({"query", "--pmaps", pmap_dir.string(), "--strategy", "MetaBox", "--b", "8",
               "--out", (tmp.path() / "qc").string()}) == 1);
}

TEST_CASE("clicks compares RDP estimates with true vertex counts", "[cli]") {
  TmpDir tmp("cli_clicks");
  const std::string out = (tmp.path() / "data").string();
  REQUIRE(cli({"synth", "--pool", "4", "--val", "1", "--size", "48", "--seed", "2", "--out",
               out}) == 0);
  const std::string csv_path = (tmp.path() / "clicks.csv").string();
  REQUIRE(cli({"clicks", "--masks", out + "/pool/masks", "--polygons",
               out + "/pool/polygons.jsonl", "--epsilon", "1.5", "--out", csv_path}) == 0);
  const std::string csv = slurp(csv_path);
  REQUIRE(csv.rfind("image_id,estimated,true\n", 0) == 0);
  REQUIRE(csv.find("TOTAL,") != std::string::npos);
}

TEST_CASE("eval reports dataset-level miou", "[cli]") {
  TmpDir tmp("cli_eval");
  const std::string out = (tmp.path() / "data").string();
  REQUIRE(cli({"synth", "--pool", "3", "--val", "1", "--size", "32", "--seed", "4", "--out",
               out}) == 0);
  // predictions == ground truth -> exit 0 (miou 1 printed)
  REQUIRE(cli({"eval", "--pred", out + "/pool/masks", "--gt", out + "/pool/masks"}) == 0);
  REQUIRE(cli({"eval", "--pred", out + "/pool/masks", "--gt",
               (tmp.path() / "nowhere").string()}) == 2);
}

TEST_CASE("report without inputs or reference is a usage error", "[cli]") {
  REQUIRE(cli({"report"}) == 1);
}
