#include "doctest.h"
#include "oracles.hpp"
#include "sdkd/bench.hpp"
#include "sdkd/cli.hpp"
#include "sdkd/config.hpp"
#include "sdkd/errors.hpp"

#include <fstream>
#include <sstream>

using namespace sdkd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

const char* kSmallConfig = R"({
  "data": {"n_classes": 6, "samples_per_class": 20, "dim": 4, "seed": 2},
  "teacher": {"epochs": 5},
  "student": {"hidden": 8},
  "train": {"epochs": 3, "batch_size": 16, "temperature": 2, "k": 3}
})";

ExperimentConfig small_experiment(const std::string& extra_cells = "") {
  auto j = nlohmann::json::parse(kSmallConfig);
  if (!extra_cells.empty()) j["grid"] = nlohmann::json::parse(extra_cells);
  return experiment_from_config(Config::from_json(j));
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr,
            std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int rc = cli_main(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

ResultRow sample_row(Method m, std::size_t k, std::uint64_t seed) {
  ResultRow r;
  r.method = m;
  r.k = k;
  r.seed = seed;
  r.top1 = 0.1 + 0.01 * static_cast<double>(k);
  r.teacher_top1 = 0.9;
  r.final_train_loss = 1.0 / 3.0;
  r.energy_evals_per_sample = k + 1;
  r.last_layer_ms = 0.25 * static_cast<double>(k);
  r.sampling_ms = 0.125;
  return r;
}

}  // namespace

TEST_CASE("Config: flattening, unknown keys and types") {
  const auto nested = Config::from_json(nlohmann::json::parse(R"({"train": {"k": 7}})"));
  const auto dotted = Config::from_json(nlohmann::json::parse(R"({"train.k": 7})"));
  CHECK(nested.get<std::size_t>("train.k", 0) == 7);
  CHECK(dotted.get<std::size_t>("train.k", 0) == 7);
  CHECK(nested.get<double>("train.temperature", 3.5) == 3.5);
  CHECK_THROWS_AS(Config::from_json(nlohmann::json::parse(R"({"train": {"kk": 1}})")), ConfigError);
  const auto typed = Config::from_json(nlohmann::json::parse(R"({"train": {"k": "ten"}})"));
  CHECK_THROWS_AS(typed.get<std::size_t>("train.k", 0), ConfigError);
  CHECK_THROWS_AS(Config::from_file("/nonexistent/config.json"), ConfigError);
  const auto grid = Config::from_json(
      nlohmann::json::parse(R"({"grid": {"cells": [{"method": "pdbs", "k": 4}], "seeds": [3]}})"));
  CHECK(grid.find("grid.cells")->is_array());
}

TEST_CASE("experiment_from_config") {
  const ExperimentConfig e = small_experiment(R"({"cells": ["distillation", "dis:5", {"method": "pdbs", "k": 2}], "seeds": [1, 2]})");
  CHECK(e.cells.size() == 3);
  CHECK(e.cells[1].method == Method::dis);
  CHECK(e.cells[1].k == 5);
  CHECK(e.cells[2].k == 2);
  CHECK(e.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(e.train.temperature == 2.0);
  CHECK(e.student.hidden == 8);
  CHECK(e.train.mixture.b2_final == 500.0);
  CHECK_THROWS_AS(small_experiment(R"({"cells": [], "seeds": [1]})"), ConfigError);
  CHECK_THROWS_AS(small_experiment(R"({"cells": ["distillation"], "seeds": []})"), ConfigError);
  CHECK_THROWS_AS(small_experiment(R"({"cells": ["magic"]})"), ConfigError);
  CHECK_THROWS_AS(small_experiment(R"({"cells": ["pdbs:0"]})"), ConfigError);
  CHECK_THROWS_AS(small_experiment(R"({"cells": ["pdbs:ten"]})"), ConfigError);
  CHECK_THROWS_AS(small_experiment(R"({"cells": ["pdbs:3x"]})"), ConfigError);
}

TEST_CASE("run_grid: one cell, one seed") {
  const ResultTable t = run_grid(small_experiment(R"({"cells": ["dis:3"], "seeds": [4]})"));
  REQUIRE(t.size() == 1);
  CHECK(t[0].ok());
  CHECK(t[0].seed == 4);
  CHECK(t[0].top1 >= 0.0);
  CHECK(t[0].top1 <= 1.0);
  CHECK(t[0].energy_evals_per_sample == 4);
}

TEST_CASE("run_grid: pdbs with k = C matches distillation") {
  const ResultTable t = run_grid(small_experiment(R"({"cells": ["distillation", "pdbs:6"], "seeds": [1]})"));
  REQUIRE(t.size() == 2);
  CHECK(t[0].top1 == t[1].top1);
  CHECK(t[0].final_train_loss == t[1].final_train_loss);
}

TEST_CASE("run_grid: failing cells do not abort the grid") {
  const ResultTable t = run_grid(small_experiment(R"({"cells": ["pdbs:99", "uniform_is:2"], "seeds": [1]})"));
  REQUIRE(t.size() == 2);
  CHECK(!t[0].ok());
  CHECK(t[0].status.rfind("error:", 0) == 0);
  CHECK(t[1].ok());
}

TEST_CASE("run_grid: resumable and parallel") {
  const auto dir = oracle::scratch("grid_resume");
  ExperimentConfig e = small_experiment(R"({"cells": ["distillation", "ftis:2"], "seeds": [1, 2]})");
  e.out_dir = dir;
  std::ostringstream first;
  const ResultTable a = run_grid(e, &first);
  CHECK(a.size() == 4);
  const std::string csv = slurp(dir / "results.csv");
  CHECK(fs::exists(dir / "timings.csv"));
  CHECK(fs::exists(dir / "plots" / "top1_vs_k.svg"));

  std::ostringstream second;
  const ResultTable b = run_grid(e, &second);
  CHECK(second.str().find("top1=") == std::string::npos);  // nothing retrained
  CHECK(slurp(dir / "results.csv") == csv);

  // drop one row; only it is recomputed
  auto lines = csv;
  const auto last = lines.rfind('\n', lines.size() - 2);
  write_text(dir / "results.csv", lines.substr(0, last + 1));
  std::ostringstream third;
  run_grid(e, &third);
  std::size_t trained = 0;
  for (std::size_t pos = 0; (pos = third.str().find("top1=", pos)) != std::string::npos; ++pos) ++trained;
  CHECK(trained == 1);
  CHECK(slurp(dir / "results.csv") == csv);

  const auto dir2 = oracle::scratch("grid_jobs");
  e.out_dir = dir2;
  e.jobs = 3;
  run_grid(e);
  CHECK(slurp(dir2 / "results.csv") == csv);
}

TEST_CASE("emit_csv: header, determinism and round trip") {
  const auto dir = oracle::scratch("emit");
  ResultTable one = {sample_row(Method::dis, 10, 3)};
  emit_csv(one, dir / "one.csv");
  const std::string text = slurp(dir / "one.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(text.rfind("method,k,seed,top1,teacher_top1,final_train_loss,energy_evals_per_sample,status\n", 0) == 0);

  ResultTable t = {sample_row(Method::distillation, 100, 0), sample_row(Method::pdbs, 5, 1),
                   sample_row(Method::uniform_is, 7, 2), sample_row(Method::ftis, 9, 3)};
  t[1].status = "error: boom, with comma";
  t[1].top1 = std::nan("");
  emit_csv(t, dir / "a.csv");
  emit_csv(t, dir / "b.csv");
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  emit_timing_csv(t, dir / "t.csv");
  ResultTable back = read_results_csv(dir / "a.csv");
  merge_timing_csv(back, dir / "t.csv");
  REQUIRE(back.size() == t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(back[i].method == t[i].method);
    CHECK(back[i].k == t[i].k);
    CHECK(back[i].seed == t[i].seed);
    CHECK(back[i].teacher_top1 == t[i].teacher_top1);
    CHECK(back[i].final_train_loss == t[i].final_train_loss);
    CHECK(back[i].energy_evals_per_sample == t[i].energy_evals_per_sample);
    CHECK(back[i].last_layer_ms == t[i].last_layer_ms);
    CHECK(back[i].sampling_ms == t[i].sampling_ms);
    if (i != 1) CHECK(back[i].top1 == t[i].top1);
  }
  CHECK(std::isnan(back[1].top1));
  CHECK(back[1].status == "error: boom; with comma");
  write_text(dir / "bad.csv", "nope\n");
  CHECK_THROWS_AS(read_results_csv(dir / "bad.csv"), FormatError);
  CHECK_THROWS_AS(emit_csv(t, dir / "no_such_dir" / "x.csv"), IoError);
}

TEST_CASE("emit_plotdata") {
  const auto dir = oracle::scratch("plots");
  ResultTable t = {sample_row(Method::dis, 5, 0), sample_row(Method::dis, 5, 1),
                   sample_row(Method::dis, 10, 0), sample_row(Method::uniform_is, 5, 0)};
  emit_plotdata(t, dir);
  const std::string k = slurp(dir / "top1_vs_k.dat");
  CHECK(k.find("# method: dis\n") != std::string::npos);
  CHECK(k.find("# method: uniform_is\n") != std::string::npos);
  CHECK(k.find("\n5 0.15000000000000002\n10 0.20000000000000001\n") != std::string::npos);
  CHECK(fs::exists(dir / "top1_vs_cost.dat"));
  const std::string svg = slurp(dir / "top1_vs_cost.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK_THROWS_AS(emit_plotdata({}, dir), ParameterError);
}

TEST_CASE("timing records") {
  TimingRecord r;
  r.add(10, 1);
  r.add(30, 3);
  r.add(20, 2);
  CHECK(r.median_last_layer_ns() == 20);
  CHECK(r.median_sampling_ns() == 2);
  CHECK(r.median_total_ns() == 22);
  const auto dir = oracle::scratch("timing");
  write_timing_record(r, dir / "r.csv");
  CHECK(read_timing_record(dir / "r.csv") == r);
}

TEST_CASE("time_last_layer: protocol and full-subset sanity") {
  const BenchBatch b = make_bench_batch(5000, 64, 64, 1.0, 0);
  Rng rng(1);
  ModelParams model = make_linear(64, 5000);
  init_uniform(model, rng);
  TimingOptions opts;
  opts.iterations = 30;
  const TimingRecord full = time_last_layer(model, b, Method::distillation, 5000, opts);
  const TimingRecord all = time_last_layer(model, b, Method::dis, 5000, opts);
  CHECK(full.iterations() == 30);
  CHECK(all.iterations() == 30);
  for (auto v : full.sampling_ns) CHECK(v == 0);
  const double ratio = all.median_total_ns() / full.median_total_ns();
  MESSAGE("sampled(k=C) / full = " << ratio);
  CHECK(ratio >= 1.0);  // sampling overhead, nothing saved
  CHECK(ratio <= 2.0);
}

TEST_CASE("cli: usage and exit codes") {
  std::string out, err;
  CHECK(run_cli({}, &out) == 2);
  CHECK(out.find("Usage") != std::string::npos);
  CHECK(run_cli({"grid", "--bogus"}, nullptr, &err) == 2);
  CHECK(run_cli({"frobnicate"}) == 2);
  CHECK(run_cli({"--help"}) == 0);
  const auto dir = oracle::scratch("cli_codes");
  write_text(dir / "bad.json", R"({"train": {"nope": 1}})");
  CHECK(run_cli({"grid", "--config", (dir / "bad.json").string()}, nullptr, &err) == 2);
  CHECK(err.find("nope") != std::string::npos);
  CHECK(run_cli({"grid", "--config", (dir / "missing.json").string()}) == 2);
  CHECK(run_cli({"train-student", "--method", "bogus"}) == 2);
  write_text(dir / "idx.json", R"({"data": {"kind": "idx", "train_images": "/none", "train_labels": "/none"}})");
  CHECK(run_cli({"train-teacher", "--config", (dir / "idx.json").string(), "--out",
                 (dir / "o").string()}, nullptr, &err) == 1);
}

TEST_CASE("cli: grid smoke run and determinism") {
  const auto dir = oracle::scratch("cli_grid");
  write_text(dir / "c.json", kSmallConfig);
  for (const char* sub : {"a", "b"}) {
    CHECK(run_cli({"grid", "--config", (dir / "c.json").string(), "--seed", "7", "--method",
                   "dis", "--k", "2", "--out", (dir / sub).string()}) == 0);
  }
  CHECK(fs::exists(dir / "a" / "results.csv"));
  CHECK(slurp(dir / "a" / "results.csv") == slurp(dir / "b" / "results.csv"));
  const auto rows = read_results_csv(dir / "a" / "results.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].method == Method::dis);
  CHECK(rows[0].k == 2);
  CHECK(rows[0].seed == 7);
  CHECK(run_cli({"plot", "--out", (dir / "a").string()}) == 0);
  CHECK(fs::exists(dir / "a" / "plots" / "top1_vs_cost.dat"));
}

TEST_CASE("cli: single-run pipeline") {
  const auto dir = oracle::scratch("cli_pipeline");
  write_text(dir / "c.json", kSmallConfig);
  const std::string cfg = (dir / "c.json").string(), out = (dir / "o").string();
  CHECK(run_cli({"gen-data", "--config", cfg, "--out", out}) == 0);
  CHECK(load_csv(dir / "o" / "train.csv", "label").data.size() == 96);
  CHECK(run_cli({"train-teacher", "--config", cfg, "--out", out}) == 0);
  CHECK(fs::exists(dir / "o" / "teacher.sdkd"));
  CHECK(run_cli({"relabel", "--config", cfg, "--out", out}) == 0);
  CHECK(load_store(dir / "o" / "soft_labels.sdsl").n_samples() == 96);
  CHECK(run_cli({"train-student", "--config", cfg, "--method", "pdbs", "--k", "2", "--out", out}) == 0);
  CHECK(fs::exists(dir / "o" / "student.sdkd"));
  CHECK(fs::exists(dir / "o" / "rank_frequencies.csv"));
  CHECK(slurp(dir / "o" / "history.csv").rfind("epoch,train_loss", 0) == 0);

  // CSV-backed data through the same commands
  write_text(dir / "csv.json", R"({"data": {"kind": "csv", "train_csv": ")" +
                                   (dir / "o" / "train.csv").string() + R"(", "test_csv": ")" +
                                   (dir / "o" / "test.csv").string() +
                                   R"("}, "teacher": {"epochs": 2}, "train": {"epochs": 1}})");
  CHECK(run_cli({"train-teacher", "--config", (dir / "csv.json").string(), "--out", (dir / "p").string()}) == 0);
  CHECK(run_cli({"train-student", "--config", (dir / "csv.json").string(), "--method", "ftis",
                 "--k", "3", "--out", (dir / "p").string()}) == 0);

  write_text(dir / "bench.json", R"({"bench": {"n_classes": 300, "dim": 8, "batch": 8, "k": 5, "iters": 30, "warmup": 2, "methods": ["distillation", "pdbs", "uniform_is", "ftis", "dis"]}})");
  std::string text;
  CHECK(run_cli({"bench-softmax", "--config", (dir / "bench.json").string(), "--out", out}, &text) == 0);
  const std::string csv = slurp(dir / "o" / "bench_softmax.csv");
  CHECK(csv.rfind("method,k,iterations,median_last_layer_ns,median_sampling_ns,median_total_ns\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  CHECK(read_timing_record(dir / "o" / "timing_dis.csv").iterations() == 30);
}
