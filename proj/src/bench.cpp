#include "sdkd/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace sdkd {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    if (s == "nan" || s == "-nan") return std::nan("");
    throw FormatError("bad number '" + s + "' in " + what);
  }
}

std::uint64_t to_u64(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad integer '" + s + "' in " + what);
  }
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

ScaleUnits parse_units(const std::string& s) {
  if (s == "percent_of_axis") return ScaleUnits::percent_of_axis;
  if (s == "normalized") return ScaleUnits::normalized;
  throw ConfigError("unknown mixture.scale_units '" + s + "'");
}

}  // namespace

DataSpec data_spec_from_config(const Config& cfg) {
  DataSpec d;
  d.kind = cfg.get<std::string>("data.kind", d.kind);
  if (d.kind != "blobs" && d.kind != "idx" && d.kind != "csv")
    throw ConfigError("data.kind must be blobs, idx or csv");
  d.blobs.n_classes = cfg.get<std::size_t>("data.n_classes", d.blobs.n_classes);
  d.blobs.samples_per_class = cfg.get<std::size_t>("data.samples_per_class", d.blobs.samples_per_class);
  d.blobs.dim = cfg.get<std::size_t>("data.dim", d.blobs.dim);
  d.blobs.center_scale = cfg.get<double>("data.center_scale", d.blobs.center_scale);
  d.blobs.noise_sigma = cfg.get<double>("data.noise_sigma", d.blobs.noise_sigma);
  d.blobs.seed = cfg.get<std::uint64_t>("data.seed", d.blobs.seed);
  d.train_images = cfg.get<std::string>("data.train_images", "");
  d.train_labels = cfg.get<std::string>("data.train_labels", "");
  d.test_images = cfg.get<std::string>("data.test_images", "");
  d.test_labels = cfg.get<std::string>("data.test_labels", "");
  d.train_csv = cfg.get<std::string>("data.train_csv", "");
  d.test_csv = cfg.get<std::string>("data.test_csv", "");
  d.label_column = cfg.get<std::string>("data.label_column", d.label_column);
  return d;
}

ModelSpec model_spec_from_config(const Config& cfg, const std::string& section,
                                 const ModelSpec& fallback) {
  ModelSpec m = fallback;
  m.hidden = cfg.get<std::size_t>(section + ".hidden", m.hidden);
  m.activation = parse_activation(cfg.get<std::string>(
      section + ".activation", m.activation == Activation::relu ? "relu" : "identity"));
  if (const auto* v = cfg.find(section + ".init_scale"); v != nullptr && !v->is_null()) {
    m.init_scale = cfg.get<double>(section + ".init_scale", 0.0);
    if (!(*m.init_scale > 0.0)) throw ConfigError(section + ".init_scale must be > 0");
  }
  return m;
}

TrainConfig teacher_train_from_config(const Config& cfg) {
  TrainConfig t;
  t.method = Method::hard_labels;
  t.temperature = 1.0;
  t.epochs = cfg.get<std::size_t>("teacher.epochs", 30);
  t.batch_size = cfg.get<std::size_t>("teacher.batch_size", 64);
  t.optimizer = parse_optimizer(cfg.get<std::string>("teacher.optimizer", "adam"));
  t.learning_rate = cfg.get<double>("teacher.lr", 0.01);
  t.seed = cfg.get<std::uint64_t>("train.seed", 0);
  validate(t);
  return t;
}

TrainConfig train_config_from_config(const Config& cfg) {
  TrainConfig t;
  t.method = parse_method(cfg.get<std::string>("train.method", "distillation"));
  t.k_or_m = cfg.get<std::size_t>("train.k", t.k_or_m);
  t.temperature = cfg.get<double>("train.temperature", 4.0);
  t.lambda = cfg.get<double>("train.lambda", t.lambda);
  t.epochs = cfg.get<std::size_t>("train.epochs", t.epochs);
  t.batch_size = cfg.get<std::size_t>("train.batch_size", t.batch_size);
  t.optimizer = parse_optimizer(cfg.get<std::string>("train.optimizer", "adam"));
  t.learning_rate = cfg.get<double>("train.lr", t.learning_rate);
  t.beta1 = cfg.get<double>("train.beta1", t.beta1);
  t.beta2 = cfg.get<double>("train.beta2", t.beta2);
  t.eps = cfg.get<double>("train.eps", t.eps);
  t.momentum = cfg.get<double>("train.momentum", t.momentum);
  t.decay = cfg.get<double>("train.decay", t.decay);
  t.seed = cfg.get<std::uint64_t>("train.seed", t.seed);
  t.teacher_floor = cfg.get<double>("train.teacher_floor", t.teacher_floor);
  t.track_loss = cfg.get<bool>("train.track_loss", t.track_loss);
  auto& mx = t.mixture;
  mx.mu1 = cfg.get<double>("mixture.mu1", mx.mu1);
  mx.b1 = cfg.get<double>("mixture.b1", mx.b1);
  mx.mu2 = cfg.get<double>("mixture.mu2", mx.mu2);
  mx.b2_init = cfg.get<double>("mixture.b2_init", mx.b2_init);
  mx.b2_final = cfg.get<double>("mixture.b2_final", 100.0 * mx.b2_init);
  mx.bins = cfg.get<std::size_t>("mixture.bins", mx.bins);
  mx.schedule_steps = cfg.get<std::uint64_t>("mixture.schedule_steps", mx.schedule_steps);
  mx.scale_units = parse_units(cfg.get<std::string>("mixture.scale_units", "percent_of_axis"));
  validate(t);
  if (!(mx.b1 > 0.0) || !(mx.b2_init > 0.0) || mx.b2_final < mx.b2_init)
    throw ConfigError("mixture scales must be > 0 with b2_final >= b2_init");
  return t;
}

ExperimentConfig experiment_from_config(const Config& cfg) {
  ExperimentConfig e;
  e.data = data_spec_from_config(cfg);
  e.teacher = model_spec_from_config(cfg, "teacher", ModelSpec{0, Activation::relu, {}});
  e.teacher_train = teacher_train_from_config(cfg);
  e.teacher_checkpoint = cfg.get<std::string>("teacher.checkpoint", "");
  e.student = model_spec_from_config(cfg, "student", ModelSpec{64, Activation::relu, {}});
  e.train = train_config_from_config(cfg);
  e.out_dir = cfg.get<std::string>("out", "");
  e.jobs = std::max<std::size_t>(1, cfg.get<std::size_t>("grid.jobs", 1));

  if (const auto* cells = cfg.find("grid.cells")) {
    if (!cells->is_array()) throw ConfigError("grid.cells must be an array");
    for (const auto& c : *cells) {
      GridCell cell;
      if (c.is_string()) {
        const std::string s = c.get<std::string>();
        const auto colon = s.find(':');
        cell.method = parse_method(s.substr(0, colon));
        cell.k = e.train.k_or_m;
        if (colon != std::string::npos) {
          const std::string ks = s.substr(colon + 1);
          std::size_t used = 0;
          try {
            cell.k = std::stoul(ks, &used);
          } catch (const std::exception&) {
            used = 0;
          }
          if (used == 0 || used != ks.size()) throw ConfigError("bad k in grid cell '" + s + "'");
        }
      } else if (c.is_object()) {
        cell.method = parse_method(c.value("method", std::string("distillation")));
        cell.k = c.value("k", e.train.k_or_m);
      } else {
        throw ConfigError("grid.cells entries must be \"method:k\" strings or objects");
      }
      e.cells.push_back(cell);
    }
  } else {
    e.cells.push_back({e.train.method, e.train.k_or_m});
  }
  if (const auto* seeds = cfg.find("grid.seeds")) {
    if (!seeds->is_array()) throw ConfigError("grid.seeds must be an array");
    for (const auto& s : *seeds) e.seeds.push_back(s.get<std::uint64_t>());
  } else {
    e.seeds.push_back(e.train.seed);
  }
  if (e.cells.empty()) throw ConfigError("grid needs at least one cell");
  if (e.seeds.empty()) throw ConfigError("grid needs at least one seed");
  for (const auto& c : e.cells)
    if (uses_subset(c.method) && c.k < 1) throw ConfigError("grid cell subset size must be >= 1");
  return e;
}

SplitDataset load_data(const DataSpec& spec) {
  if (spec.kind == "blobs") return gen_blobs(spec.blobs);
  SplitDataset out;
  if (spec.kind == "idx") {
    out.train = load_idx(spec.train_images, spec.train_labels);
    out.test = load_idx(spec.test_images, spec.test_labels);
  } else if (spec.kind == "csv") {
    out.train = load_csv(spec.train_csv, spec.label_column).data;
    out.test = load_csv(spec.test_csv, spec.label_column).data;
  } else {
    throw ConfigError("unknown data.kind '" + spec.kind + "'");
  }
  const std::size_t c = std::max(out.train.n_classes, out.test.n_classes);
  out.train.n_classes = c;
  out.test.n_classes = c;
  if (out.train.dim() != out.test.dim()) throw ShapeError("train/test feature dimensions differ");
  return out;
}

// ---------------------------------------------------------------------------
// Result tables

namespace {

const char* kResultsHeader =
    "method,k,seed,top1,teacher_top1,final_train_loss,energy_evals_per_sample,status";
const char* kTimingHeader = "method,k,seed,last_layer_ms,sampling_ms";

std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

void emit_csv(const ResultTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kResultsHeader << '\n';
  for (const auto& r : table) {
    out << to_string(r.method) << ',' << r.k << ',' << r.seed << ',' << fmt_double(r.top1) << ','
        << fmt_double(r.teacher_top1) << ',' << fmt_double(r.final_train_loss) << ','
        << r.energy_evals_per_sample << ',' << sanitize(r.status) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void emit_timing_csv(const ResultTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kTimingHeader << '\n';
  for (const auto& r : table)
    out << to_string(r.method) << ',' << r.k << ',' << r.seed << ',' << fmt_double(r.last_layer_ms)
        << ',' << fmt_double(r.sampling_ms) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

ResultTable read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader)
    throw FormatError("unexpected results header in " + path.string());
  ResultTable table;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 8) throw FormatError("bad results row in " + path.string() + ": " + line);
    ResultRow r;
    r.method = parse_method(cells[0]);
    r.k = to_u64(cells[1], path.string());
    r.seed = to_u64(cells[2], path.string());
    r.top1 = to_double(cells[3], path.string());
    r.teacher_top1 = to_double(cells[4], path.string());
    r.final_train_loss = to_double(cells[5], path.string());
    r.energy_evals_per_sample = to_u64(cells[6], path.string());
    r.status = cells[7];
    table.push_back(r);
  }
  return table;
}

void merge_timing_csv(ResultTable& table, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kTimingHeader)
    throw FormatError("unexpected timing header in " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 5) throw FormatError("bad timing row in " + path.string());
    const Method m = parse_method(cells[0]);
    const auto k = to_u64(cells[1], path.string());
    const auto seed = to_u64(cells[2], path.string());
    for (auto& r : table) {
      if (r.method == m && r.k == k && r.seed == seed) {
        r.last_layer_ms = to_double(cells[3], path.string());
        r.sampling_ms = to_double(cells[4], path.string());
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Plots

std::string render_svg(const std::vector<PlotSeries>& series, const std::string& title,
                       const std::string& x_label, const std::string& y_label) {
  constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 150, kTop = 40, kBottom = 55;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.05, y1 += 0.05;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return kTop + ph - (y - y0) / (y1 - y0) * ph; };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  char buf[256];
  std::ostringstream o;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "font-family=\"sans-serif\" font-size=\"12\">\n",
                kW, kH);
  o << buf;
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"22\" font-size=\"15\">%s</text>\n", kLeft,
                title.c_str());
  o << buf;
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" "
                "stroke=\"black\"/>\n",
                kLeft, kTop, pw, ph);
  o << buf;
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.4g</text>\n", sx(xv),
                  kTop + ph + 18, xv);
    o << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.4g</text>\n",
                  kLeft - 6, sy(yv) + 4, yv);
    o << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%s</text>\n",
                kLeft + pw / 2, kH - 12, x_label.c_str());
  o << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"16\" y=\"%.1f\" text-anchor=\"middle\" "
                "transform=\"rotate(-90 16 %.1f)\">%s</text>\n",
                kTop + ph / 2, kTop + ph / 2, y_label.c_str());
  o << buf;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = colors[i % 8];
    const auto& s = series[i];
    if (s.points.size() > 1) {
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
      for (const auto& [x, y] : s.points) {
        std::snprintf(buf, sizeof buf, "%.1f,%.1f ", sx(x), sy(y));
        o << buf;
      }
      o << "\"/>\n";
    }
    for (const auto& [x, y] : s.points) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3.5\" fill=\"%s\"/>\n",
                    sx(x), sy(y), color);
      o << buf;
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(i);
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"4\" fill=\"%s\"/><text x=\"%.1f\" "
                  "y=\"%.1f\">%s</text>\n",
                  kW - kRight + 16, ly, color, kW - kRight + 26, ly + 4, s.name.c_str());
    o << buf;
  }
  o << "</svg>\n";
  return o.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string series_text(const std::vector<PlotSeries>& series, const std::string& x_name) {
  std::ostringstream o;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (i > 0) o << "\n\n";
    o << "# method: " << series[i].name << "\n# " << x_name << " top1\n";
    for (const auto& [x, y] : series[i].points) o << fmt_double(x) << ' ' << fmt_double(y) << '\n';
  }
  return o.str();
}

}  // namespace

void emit_plotdata(const ResultTable& table, const std::filesystem::path& dir) {
  if (table.empty()) throw ParameterError("cannot plot an empty result table");
  std::filesystem::create_directories(dir);
  struct Agg {
    double top1 = 0.0, cost = 0.0;
    std::size_t n = 0;
  };
  // method order follows first appearance in the table
  std::vector<Method> methods;
  std::map<std::pair<int, std::size_t>, Agg> agg;
  for (const auto& r : table) {
    if (!r.ok()) continue;
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
    auto& a = agg[{static_cast<int>(r.method), r.k}];
    a.top1 += r.top1;
    a.cost += r.last_layer_ms + r.sampling_ms;
    ++a.n;
  }
  std::vector<PlotSeries> by_k, by_cost;
  for (Method m : methods) {
    PlotSeries sk{std::string(to_string(m)), {}}, sc{std::string(to_string(m)), {}};
    for (const auto& [key, a] : agg) {
      if (key.first != static_cast<int>(m)) continue;
      const double n = static_cast<double>(a.n);
      sk.points.emplace_back(static_cast<double>(key.second), a.top1 / n);
      sc.points.emplace_back(a.cost / n, a.top1 / n);
    }
    std::sort(sc.points.begin(), sc.points.end());
    by_k.push_back(std::move(sk));
    by_cost.push_back(std::move(sc));
  }
  write_text(dir / "top1_vs_k.dat", series_text(by_k, "k"));
  write_text(dir / "top1_vs_cost.dat", series_text(by_cost, "cost_ms"));
  write_text(dir / "top1_vs_k.svg",
             render_svg(by_k, "Top-1 accuracy vs subset size", "subset size k", "top-1"));
  write_text(dir / "top1_vs_cost.svg",
             render_svg(by_cost, "Top-1 accuracy vs last-layer cost",
                        "last-layer + sampling ms per mini-batch", "top-1"));
}

// ---------------------------------------------------------------------------
// Grid runner

namespace {

struct SeedContext {
  ModelParams teacher;
  double teacher_top1 = 0.0;
  SoftLabelStore soft_labels;
  RankMaps rank_maps;
};

ResultRow run_cell(const ExperimentConfig& cfg, const SplitDataset& data, const SeedContext& ctx,
                   const GridCell& cell, std::uint64_t seed) {
  ResultRow row;
  row.method = cell.method;
  row.k = cell.k;
  row.seed = seed;
  row.teacher_top1 = ctx.teacher_top1;
  try {
    TrainConfig tc = cfg.train;
    tc.method = cell.method;
    tc.k_or_m = cell.k;
    tc.seed = seed;
    const TrainResult res =
        train_student(data.train, ctx.soft_labels, ctx.rank_maps, ctx.teacher, cfg.student, tc);
    row.top1 = evaluate_top1(res.model, data.test);
    row.final_train_loss = res.history.back().train_loss;
    row.energy_evals_per_sample = res.max_energy_evals_per_sample;
    row.last_layer_ms = res.timing.mean_last_layer_ms();
    row.sampling_ms = res.timing.mean_sampling_ms();
  } catch (const std::exception& e) {
    row.top1 = std::nan("");
    row.final_train_loss = std::nan("");
    row.status = std::string("error: ") + e.what();
  }
  return row;
}

}  // namespace

ResultTable run_grid(const ExperimentConfig& cfg, std::ostream* progress) {
  if (cfg.cells.empty() || cfg.seeds.empty())
    throw ConfigError("grid needs at least one cell and one seed");
  const SplitDataset data = load_data(cfg.data);

  const std::size_t n_rows = cfg.cells.size() * cfg.seeds.size();
  std::vector<std::optional<ResultRow>> rows(n_rows);
  const bool write = !cfg.out_dir.empty();
  if (write) {
    std::filesystem::create_directories(cfg.out_dir);
    const auto prev = cfg.out_dir / "results.csv";
    if (std::filesystem::exists(prev)) {
      ResultTable old = read_results_csv(prev);
      if (std::filesystem::exists(cfg.out_dir / "timings.csv"))
        merge_timing_csv(old, cfg.out_dir / "timings.csv");
      for (std::size_t c = 0; c < cfg.cells.size(); ++c)
        for (std::size_t s = 0; s < cfg.seeds.size(); ++s)
          for (const auto& r : old)
            if (r.ok() && r.method == cfg.cells[c].method && r.k == cfg.cells[c].k &&
                r.seed == cfg.seeds[s])
              rows[c * cfg.seeds.size() + s] = r;
    }
  }

  std::mutex mu;
  auto collect = [&]() {
    ResultTable t;
    for (const auto& r : rows)
      if (r) t.push_back(*r);
    return t;
  };
  auto flush = [&]() {
    if (!write) return;
    const ResultTable t = collect();
    emit_csv(t, cfg.out_dir / "results.csv");
    emit_timing_csv(t, cfg.out_dir / "timings.csv");
  };

  // Teachers and soft labels, one per seed that still has work.
  std::map<std::uint64_t, SeedContext> contexts;
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    bool pending = false;
    for (std::size_t c = 0; c < cfg.cells.size(); ++c)
      pending = pending || !rows[c * cfg.seeds.size() + s];
    const std::uint64_t seed = cfg.seeds[s];
    if (!pending || contexts.count(seed) != 0) continue;
    SeedContext ctx;
    if (!cfg.teacher_checkpoint.empty()) {
      ctx.teacher = load_model(cfg.teacher_checkpoint);
    } else {
      TrainConfig tt = cfg.teacher_train;
      tt.seed = seed;
      ctx.teacher = train_teacher(data.train, cfg.teacher, tt).model;
    }
    ctx.teacher_top1 = evaluate_top1(ctx.teacher, data.test);
    ctx.soft_labels = relabel_dataset(ctx.teacher, data.train, cfg.train.temperature);
    ctx.rank_maps = RankMaps(ctx.soft_labels);
    if (progress != nullptr)
      *progress << "seed " << seed << ": teacher test top-1 " << ctx.teacher_top1 << '\n';
    contexts.emplace(seed, std::move(ctx));
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < n_rows; ++i)
    if (!rows[i]) todo.push_back(i);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= todo.size()) return;
      const std::size_t i = todo[t];
      const GridCell& cell = cfg.cells[i / cfg.seeds.size()];
      const std::uint64_t seed = cfg.seeds[i % cfg.seeds.size()];
      ResultRow row = run_cell(cfg, data, contexts.at(seed), cell, seed);
      std::lock_guard<std::mutex> lock(mu);
      if (progress != nullptr)
        *progress << to_string(row.method) << " k=" << row.k << " seed=" << row.seed
                  << " top1=" << row.top1 << (row.ok() ? "" : " [" + row.status + "]") << '\n';
      rows[i] = std::move(row);
      flush();
    }
  };
  const std::size_t n_threads = std::min(cfg.jobs, std::max<std::size_t>(1, todo.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < n_threads; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ResultTable table = collect();
  if (write) {
    flush();
    if (std::any_of(table.begin(), table.end(), [](const ResultRow& r) { return r.ok(); }))
      emit_plotdata(table, cfg.out_dir / "plots");
  }
  return table;
}

// ---------------------------------------------------------------------------
// Timing

BenchBatch make_bench_batch(std::size_t n_classes, std::size_t dim, std::size_t batch,
                            double temperature, std::uint64_t seed) {
  Rng rng(seed);
  BenchBatch b;
  b.data.n_classes = n_classes;
  b.data.inputs = DenseMatrix(batch, dim);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : b.data.inputs.data) v = gauss(rng);
  std::uniform_int_distribution<std::size_t> pick(0, n_classes - 1);
  for (std::size_t i = 0; i < batch; ++i) b.data.labels.push_back(static_cast<ClassId>(pick(rng)));
  b.teacher = make_linear(dim, n_classes);
  init_uniform(b.teacher, rng, 1.0);
  b.soft_labels = relabel_dataset(b.teacher, b.data, temperature);
  b.rank_maps = RankMaps(b.soft_labels);
  return b;
}

TimingRecord time_last_layer(const ModelParams& model, const BenchBatch& batch, Method method,
                             std::size_t k, const TimingOptions& opts) {
  TrainConfig cfg = opts.base;
  cfg.method = method;
  cfg.k_or_m = k;
  const std::uint64_t steps = opts.warmup + opts.iterations;
  BatchGradient engine(batch.data, &batch.soft_labels, &batch.rank_maps, &batch.teacher,
                       model.num_classes(), cfg, steps);
  std::vector<std::size_t> samples(batch.data.size());
  std::iota(samples.begin(), samples.end(), std::size_t{0});
  ParamGrad grad = ParamGrad::zeros_like(model);
  Rng rng(opts.seed);
  TimingRecord rec;
  for (std::uint64_t it = 0; it < steps; ++it) {
    const BatchTiming t = engine.compute(model, samples, it, rng, grad);
    if (it >= opts.warmup) rec.add(t.last_layer_ns, t.sampling_ns);
  }
  return rec;
}

void write_timing_record(const TimingRecord& rec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "iteration,last_layer_ns,sampling_ns\n";
  for (std::size_t i = 0; i < rec.iterations(); ++i)
    out << i << ',' << rec.last_layer_ns[i] << ',' << rec.sampling_ns[i] << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

TimingRecord read_timing_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "iteration,last_layer_ns,sampling_ns")
    throw FormatError("unexpected timing record header in " + path.string());
  TimingRecord rec;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 3) throw FormatError("bad timing record row in " + path.string());
    rec.add(static_cast<std::int64_t>(to_u64(cells[1], path.string())),
            static_cast<std::int64_t>(to_u64(cells[2], path.string())));
  }
  return rec;
}

}  // namespace sdkd
