#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sdkd/config.hpp"
#include "sdkd/data.hpp"
#include "sdkd/soft_labels.hpp"
#include "sdkd/timing.hpp"
#include "sdkd/training.hpp"

namespace sdkd {

struct DataSpec {
  std::string kind = "blobs";  // blobs | idx | csv
  BlobsConfig blobs;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::filesystem::path train_csv, test_csv;
  std::string label_column = "label";
};

SplitDataset load_data(const DataSpec& spec);

struct GridCell {
  Method method = Method::distillation;
  std::size_t k = 10;
};

struct ExperimentConfig {
  DataSpec data;
  ModelSpec teacher;
  TrainConfig teacher_train;
  std::filesystem::path teacher_checkpoint;  // empty: train one per seed
  ModelSpec student;
  TrainConfig train;
  std::vector<GridCell> cells;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path out_dir;  // empty: nothing is written
  std::size_t jobs = 1;
};

// Reads every section of a Config; missing keys keep the defaults below.
// Defaults: adam lr 0.01, beta1 0.9, beta2 0.99,
// 30 epochs. Throws ConfigError on invalid values.
ExperimentConfig experiment_from_config(const Config& cfg);
DataSpec data_spec_from_config(const Config& cfg);
ModelSpec model_spec_from_config(const Config& cfg, const std::string& section,
                                 const ModelSpec& fallback);
TrainConfig teacher_train_from_config(const Config& cfg);
TrainConfig train_config_from_config(const Config& cfg);

struct ResultRow {
  Method method = Method::distillation;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  double top1 = 0.0;
  double teacher_top1 = 0.0;
  double final_train_loss = 0.0;
  std::size_t energy_evals_per_sample = 0;
  double last_layer_ms = 0.0;  // mean per mini-batch
  double sampling_ms = 0.0;    // mean per mini-batch
  std::string status = "ok";

  bool ok() const { return status == "ok"; }
};

using ResultTable = std::vector<ResultRow>;

// Trains (or loads) a teacher per seed, relabels the training split at the
// student temperature, trains a student per (cell, seed) and evaluates it on
// the test split. Cell failures are recorded in the row status. When out_dir
// is set, rows already present in out_dir/results.csv are reused and the
// results/timing/plot files are (re)written after every finished row.
ResultTable run_grid(const ExperimentConfig& cfg, std::ostream* progress = nullptr);

// results.csv holds the deterministic columns:
//   method,k,seed,top1,teacher_top1,final_train_loss,energy_evals_per_sample,status
// timings.csv holds method,k,seed,last_layer_ms,sampling_ms.
void emit_csv(const ResultTable& table, const std::filesystem::path& path);
void emit_timing_csv(const ResultTable& table, const std::filesystem::path& path);
ResultTable read_results_csv(const std::filesystem::path& path);
// Fills timing columns of matching (method, k, seed) rows.
void merge_timing_csv(ResultTable& table, const std::filesystem::path& path);

// Writes <dir>/top1_vs_k.dat, <dir>/top1_vs_cost.dat (one whitespace-separated
// block per method, mean over seeds) and matching .svg scatter plots.
void emit_plotdata(const ResultTable& table, const std::filesystem::path& dir);

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};
std::string render_svg(const std::vector<PlotSeries>& series, const std::string& title,
                       const std::string& x_label, const std::string& y_label);

// A synthetic mini-batch with a teacher, soft labels and rank maps for timing.
struct BenchBatch {
  Dataset data;
  ModelParams teacher;
  SoftLabelStore soft_labels;
  RankMaps rank_maps;
};

BenchBatch make_bench_batch(std::size_t n_classes, std::size_t dim, std::size_t batch,
                            double temperature, std::uint64_t seed);

struct TimingOptions {
  std::size_t warmup = 10;
  std::size_t iterations = 30;
  std::uint64_t seed = 0;
  TrainConfig base;  // temperature, floor and mixture settings
};

// Times repeated mini-batch gradients of `method` on the batch with the given
// model snapshot. Warmup iterations are discarded.
TimingRecord time_last_layer(const ModelParams& model, const BenchBatch& batch, Method method,
                             std::size_t k, const TimingOptions& opts);

// CSV: iteration,last_layer_ns,sampling_ns
void write_timing_record(const TimingRecord& rec, const std::filesystem::path& path);
TimingRecord read_timing_record(const std::filesystem::path& path);

}  // namespace sdkd
