#include "sdkd/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "sdkd/bench.hpp"
#include "sdkd/config.hpp"
#include "sdkd/errors.hpp"

namespace sdkd {

namespace {

namespace fs = std::filesystem;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::size_t> k;
  std::optional<std::string> out;
  std::optional<std::size_t> jobs;
};

Config load_config(const Flags& f) {
  Config cfg;
  if (!f.config.empty()) cfg = Config::from_file(f.config);
  if (f.seed) cfg.set("train.seed", *f.seed);
  if (f.method) {
    parse_method(*f.method);  // reject bad names early
    cfg.set("train.method", *f.method);
  }
  if (f.k) cfg.set("train.k", *f.k);
  if (f.out) cfg.set("out", *f.out);
  if (f.jobs) cfg.set("grid.jobs", *f.jobs);
  return cfg;
}

fs::path out_dir(const Config& cfg) {
  const fs::path dir = cfg.get<std::string>("out", "sdkd_out");
  fs::create_directories(dir);
  return dir;
}

fs::path teacher_path(const Config& cfg, const fs::path& dir) {
  const std::string p = cfg.get<std::string>("teacher.checkpoint", "");
  return p.empty() ? dir / "teacher.sdkd" : fs::path(p);
}

int cmd_gen_data(const Config& cfg, std::ostream& out) {
  DataSpec spec = data_spec_from_config(cfg);
  if (spec.kind != "blobs") throw ConfigError("gen-data only generates data.kind = blobs");
  if (cfg.has("train.seed") && !cfg.has("data.seed"))
    spec.blobs.seed = cfg.get<std::uint64_t>("train.seed", 0);
  const fs::path dir = out_dir(cfg);
  const SplitDataset d = gen_blobs(spec.blobs);
  save_csv(d.train, dir / "train.csv");
  save_csv(d.test, dir / "test.csv");
  out << "wrote " << (dir / "train.csv").string() << " (" << d.train.size() << " rows) and "
      << (dir / "test.csv").string() << " (" << d.test.size() << " rows)\n";
  return 0;
}

int cmd_train_teacher(const Config& cfg, std::ostream& out) {
  const ExperimentConfig e = experiment_from_config(cfg);
  const fs::path dir = out_dir(cfg);
  const SplitDataset data = load_data(e.data);
  const TrainResult res = train_teacher(data.train, e.teacher, e.teacher_train, &data.test);
  const fs::path ckpt = teacher_path(cfg, dir);
  save_model(res.model, ckpt);
  write_history_csv(res.history, dir / "teacher_history.csv");
  out << "teacher test top-1 " << evaluate_top1(res.model, data.test) << ", saved "
      << ckpt.string() << '\n';
  return 0;
}

int cmd_relabel(const Config& cfg, std::ostream& out) {
  const ExperimentConfig e = experiment_from_config(cfg);
  const fs::path dir = out_dir(cfg);
  const SplitDataset data = load_data(e.data);
  const ModelParams teacher = load_model(teacher_path(cfg, dir));
  const SoftLabelStore store = relabel_dataset(teacher, data.train, e.train.temperature);
  const std::string configured = cfg.get<std::string>("train.soft_labels", "");
  const fs::path path = configured.empty() ? dir / "soft_labels.sdsl" : fs::path(configured);
  save_store(store, path);
  out << "wrote " << store.n_samples() << " soft labels at T=" << store.temperature << " to "
      << path.string() << '\n';
  return 0;
}

int cmd_train_student(const Config& cfg, std::ostream& out) {
  const ExperimentConfig e = experiment_from_config(cfg);
  const fs::path dir = out_dir(cfg);
  const SplitDataset data = load_data(e.data);
  const ModelParams teacher = load_model(teacher_path(cfg, dir));
  const std::string sl = cfg.get<std::string>("train.soft_labels", "");
  const SoftLabelStore store = sl.empty()
                                   ? relabel_dataset(teacher, data.train, e.train.temperature)
                                   : load_store(sl);
  if (store.n_samples() != data.train.size())
    throw ShapeError("soft labels do not match the training set");
  const RankMaps ranks(store);
  const TrainResult res = train_student(data.train, store, ranks, teacher, e.student, e.train,
                                        &data.test);
  save_model(res.model, dir / "student.sdkd");
  write_history_csv(res.history, dir / "history.csv");
  if (e.train.method == Method::pdbs)
    write_rank_frequency_csv(res.rank_frequencies, dir / "rank_frequencies.csv");
  ResultRow row;
  row.method = e.train.method;
  row.k = e.train.k_or_m;
  row.seed = e.train.seed;
  row.top1 = evaluate_top1(res.model, data.test);
  row.teacher_top1 = evaluate_top1(teacher, data.test);
  row.final_train_loss = res.history.back().train_loss;
  row.energy_evals_per_sample = res.max_energy_evals_per_sample;
  row.last_layer_ms = res.timing.mean_last_layer_ms();
  row.sampling_ms = res.timing.mean_sampling_ms();
  emit_csv({row}, dir / "results.csv");
  emit_timing_csv({row}, dir / "timings.csv");
  out << to_string(row.method) << " k=" << row.k << " seed=" << row.seed << " test top-1 "
      << row.top1 << '\n';
  return 0;
}

int cmd_grid(const Config& cfg, std::ostream& out) {
  ExperimentConfig e = experiment_from_config(cfg);
  e.out_dir = out_dir(cfg);
  const ResultTable table = run_grid(e, &out);
  const auto failed = std::count_if(table.begin(), table.end(),
                                    [](const ResultRow& r) { return !r.ok(); });
  out << table.size() << " rows, " << failed << " failed; results in "
      << (e.out_dir / "results.csv").string() << '\n';
  return failed == 0 ? 0 : 1;
}

int cmd_bench_softmax(const Config& cfg, std::ostream& out) {
  const fs::path dir = out_dir(cfg);
  const auto n_classes = cfg.get<std::size_t>("bench.n_classes", 5000);
  const auto dim = cfg.get<std::size_t>("bench.dim", 64);
  const auto batch_size = cfg.get<std::size_t>("bench.batch", 64);
  const auto k = cfg.get<std::size_t>("bench.k", cfg.get<std::size_t>("train.k", 50));
  const auto hidden = cfg.get<std::size_t>("bench.hidden", 0);
  std::vector<std::string> names =
      cfg.get<std::vector<std::string>>("bench.methods", {"distillation", "dis"});
  if (cfg.has("train.method") && !cfg.has("bench.methods"))
    names = {"distillation", cfg.get<std::string>("train.method", "dis")};
  std::vector<Method> methods;
  for (const auto& n : names) methods.push_back(parse_method(n));

  TimingOptions opts;
  opts.warmup = cfg.get<std::size_t>("bench.warmup", 10);
  opts.iterations = cfg.get<std::size_t>("bench.iters", 30);
  opts.seed = cfg.get<std::uint64_t>("bench.seed", cfg.get<std::uint64_t>("train.seed", 0));
  opts.base = train_config_from_config(cfg);
  if (opts.iterations == 0) throw ConfigError("bench.iters must be >= 1");
  if (n_classes < 2 || dim == 0 || batch_size == 0) throw ConfigError("invalid bench shape");
  if (k < 1 || k > n_classes) throw ConfigError("bench.k must be in [1, n_classes]");

  const BenchBatch batch =
      make_bench_batch(n_classes, dim, batch_size, opts.base.temperature, opts.seed);
  Rng rng(opts.seed + 1);
  ModelParams model = hidden == 0 ? make_linear(dim, n_classes)
                                  : make_mlp(dim, hidden, n_classes, Activation::relu);
  init_uniform(model, rng);

  std::ofstream csv(dir / "bench_softmax.csv", std::ios::trunc | std::ios::binary);
  if (!csv) throw IoError("cannot write " + (dir / "bench_softmax.csv").string());
  csv << "method,k,iterations,median_last_layer_ns,median_sampling_ns,median_total_ns\n";
  for (Method m : methods) {
    const TimingRecord rec = time_last_layer(model, batch, m, k, opts);
    write_timing_record(rec, dir / ("timing_" + std::string(to_string(m)) + ".csv"));
    char line[256];
    std::snprintf(line, sizeof line, "%s,%zu,%zu,%.0f,%.0f,%.0f\n",
                  std::string(to_string(m)).c_str(), uses_subset(m) ? k : n_classes,
                  rec.iterations(), rec.median_last_layer_ns(), rec.median_sampling_ns(),
                  rec.median_total_ns());
    csv << line;
    std::snprintf(line, sizeof line, "%-13s last-layer %10.3f ms  sampling %8.3f ms  total %10.3f ms\n",
                  std::string(to_string(m)).c_str(), rec.median_last_layer_ns() / 1e6,
                  rec.median_sampling_ns() / 1e6, rec.median_total_ns() / 1e6);
    out << line;
  }
  return 0;
}

int cmd_plot(const Config& cfg, std::ostream& out) {
  const fs::path dir = out_dir(cfg);
  ResultTable table = read_results_csv(dir / "results.csv");
  if (fs::exists(dir / "timings.csv")) merge_timing_csv(table, dir / "timings.csv");
  emit_plotdata(table, dir / "plots");
  out << "wrote plot data for " << table.size() << " rows to " << (dir / "plots").string()
      << '\n';
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sampled-softmax distillation experiments", "sdkd"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags flags;
  std::uint64_t seed = 0;
  std::string method, out_path;
  std::size_t k = 0, jobs = 0;
  app.add_option("--config", flags.config, "JSON config file");
  auto* seed_opt = app.add_option("--seed", seed, "random seed (train.seed)");
  auto* method_opt = app.add_option("--method", method, "training method (train.method)");
  auto* k_opt = app.add_option("--k", k, "subset or sample size (train.k)");
  auto* out_opt = app.add_option("--out", out_path, "output directory");
  auto* jobs_opt = app.add_option("--jobs", jobs, "parallel grid cells")->check(CLI::PositiveNumber);

  using Handler = int (*)(const Config&, std::ostream&);
  const std::vector<std::pair<std::string, std::pair<std::string, Handler>>> commands = {
      {"gen-data", {"generate a blobs dataset as train/test CSV", cmd_gen_data}},
      {"train-teacher", {"train a teacher on hard labels and save a checkpoint", cmd_train_teacher}},
      {"relabel", {"write teacher soft labels for the training set", cmd_relabel}},
      {"train-student", {"train one student with the configured method", cmd_train_student}},
      {"grid", {"run the (method, k) x seed grid", cmd_grid}},
      {"bench-softmax", {"time full and sampled last-layer gradients", cmd_bench_softmax}},
      {"plot", {"emit plot data and SVGs from results.csv", cmd_plot}},
  };
  for (const auto& [name, info] : commands) app.add_subcommand(name, info.first);

  if (args.empty()) {
    out << app.help();
    return 2;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }
  if (seed_opt->count() > 0) flags.seed = seed;
  if (method_opt->count() > 0) flags.method = method;
  if (k_opt->count() > 0) flags.k = k;
  if (out_opt->count() > 0) flags.out = out_path;
  if (jobs_opt->count() > 0) flags.jobs = jobs;

  const auto* sub = app.get_subcommands().front();
  Handler handler = nullptr;
  for (const auto& [name, info] : commands)
    if (name == sub->get_name()) handler = info.second;

  try {
    const Config cfg = load_config(flags);
    return handler(cfg, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace sdkd
