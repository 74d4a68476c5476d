#include "sdkd/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace sdkd {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::hard_labels: return "hard_labels";
    case Method::distillation: return "distillation";
    case Method::pdbs: return "pdbs";
    case Method::uniform_is: return "uniform_is";
    case Method::ftis: return "ftis";
    case Method::dis: return "dis";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::hard_labels, Method::distillation, Method::pdbs, Method::uniform_is,
                   Method::ftis, Method::dis})
    if (to_string(m) == name) return m;
  if (name == "uniform") return Method::uniform_is;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerKind o) {
  return o == OptimizerKind::adam ? "adam" : "rmsprop";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

bool is_sampled(Method m) {
  return m == Method::uniform_is || m == Method::ftis || m == Method::dis;
}

bool uses_subset(Method m) { return m == Method::pdbs || is_sampled(m); }

void validate(const TrainConfig& cfg) {
  if (uses_subset(cfg.method) && cfg.k_or_m < 1)
    throw ConfigError("subset size must be >= 1 for " + std::string(to_string(cfg.method)));
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw ConfigError("lambda must be in [0,1]");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(cfg.teacher_floor >= 0.0)) throw ConfigError("teacher_floor must be >= 0");
}

ModelParams init_model(const ModelSpec& spec, std::size_t d_in, std::size_t n_classes, Rng& rng) {
  ModelParams m = spec.hidden == 0 ? make_linear(d_in, n_classes)
                                   : make_mlp(d_in, spec.hidden, n_classes, spec.activation);
  init_uniform(m, rng, spec.init_scale);
  return m;
}

OptimizerState OptimizerState::fresh(OptimizerKind kind, const ModelParams& model) {
  OptimizerState s;
  s.kind = kind;
  for (auto a : model.arrays()) {
    s.first.emplace_back(a.size(), 0.0);
    s.second.emplace_back(a.size(), 0.0);
  }
  return s;
}

namespace {

void check_congruent(const std::vector<std::span<double>>& params,
                     const std::vector<std::span<const double>>& grads,
                     const OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.first.size())
    throw ShapeError("optimizer: parameter/gradient/state arrays differ");
  for (std::size_t a = 0; a < params.size(); ++a)
    if (params[a].size() != grads[a].size() || params[a].size() != state.first[a].size())
      throw ShapeError("optimizer: parameter/gradient/state shapes differ");
}

}  // namespace

void adam_step(ModelParams& params, const ParamGrad& grad, OptimizerState& state, double lr,
               double beta1, double beta2, double eps) {
  auto p = params.arrays();
  const auto g = grad.arrays();
  check_congruent(p, g, state);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t a = 0; a < p.size(); ++a) {
    auto& m = state.first[a];
    auto& v = state.second[a];
    for (std::size_t i = 0; i < p[a].size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[a][i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[a][i] * g[a][i];
      p[a][i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

void rmsprop_step(ModelParams& params, const ParamGrad& grad, OptimizerState& state, double lr,
                  double momentum, double decay, double eps) {
  auto p = params.arrays();
  const auto g = grad.arrays();
  check_congruent(p, g, state);
  ++state.step;
  for (std::size_t a = 0; a < p.size(); ++a) {
    auto& ms = state.first[a];
    auto& mom = state.second[a];
    for (std::size_t i = 0; i < p[a].size(); ++i) {
      ms[i] = decay * ms[i] + (1.0 - decay) * g[a][i] * g[a][i];
      mom[i] = momentum * mom[i] + lr * g[a][i] / std::sqrt(ms[i] + eps);
      p[a][i] -= mom[i];
    }
  }
}

double evaluate_top1(const ModelParams& model, const Dataset& data) {
  if (data.size() == 0) throw ParameterError("evaluate_top1 on an empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (predict_top1(model, data.input(i)) == data.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

namespace {

struct LossSettings {
  double temperature;
  double lambda;
};

LossSettings loss_settings(const TrainConfig& cfg) {
  switch (cfg.method) {
    case Method::hard_labels: return {1.0, 0.0};
    case Method::distillation: return {cfg.temperature, cfg.lambda};
    default: return {cfg.temperature, 1.0};
  }
}

}  // namespace

BatchGradient::BatchGradient(const Dataset& data, const SoftLabelStore* soft_labels,
                             const RankMaps* rank_maps, const ModelParams* teacher,
                             std::size_t n_classes, const TrainConfig& cfg,
                             std::uint64_t total_steps)
    : data_(data),
      store_(soft_labels),
      ranks_(rank_maps),
      teacher_(teacher),
      cfg_(cfg),
      mixture_(cfg.mixture),
      n_classes_(n_classes),
      uniform_table_(build_alias(proposal_uniform(n_classes))),
      all_classes_(n_classes),
      energies_(n_classes) {
  validate(cfg_);
  const LossSettings ls = loss_settings(cfg_);
  temperature_ = ls.temperature;
  lambda_ = ls.lambda;
  std::iota(all_classes_.begin(), all_classes_.end(), ClassId{0});
  if (data.n_classes != n_classes) throw ShapeError("dataset classes != model outputs");

  const std::size_t n = data.size();
  if (cfg_.method != Method::hard_labels) {
    if (store_ == nullptr || store_->n_samples() != n || store_->n_classes() != n_classes)
      throw ShapeError("soft labels are not aligned with the training set");
    if (ranks_ == nullptr || ranks_->n_samples() != n || ranks_->n_classes() != n_classes)
      throw ShapeError("rank maps are not aligned with the training set");
  }
  if (is_sampled(cfg_.method)) {
    if (teacher_ == nullptr || teacher_->num_classes() != n_classes ||
        teacher_->input_dim() != data.dim())
      throw ShapeError("teacher does not match the training set");
  }
  if (cfg_.method == Method::pdbs && cfg_.k_or_m > n_classes)
    throw ConfigError("pdbs subset size exceeds the number of classes");

  if (mixture_.bins == 0) mixture_.bins = n_classes;
  if (mixture_.schedule_steps == 0) mixture_.schedule_steps = std::max<std::uint64_t>(1, total_steps);
  if (cfg_.method == Method::dis) {
    validate(mixture_);
    if (mixture_.bins > n_classes) throw ConfigError("mixture.bins exceeds the number of classes");
  }
  bin_bounds_.resize(mixture_.bins + 1);
  for (std::size_t j = 0; j <= mixture_.bins; ++j) bin_bounds_[j] = (j * n_classes) / mixture_.bins;
}

BatchTiming BatchGradient::compute(const ModelParams& model, std::span<const std::size_t> samples,
                                   std::uint64_t step, Rng& rng, ParamGrad& grad,
                                   RankFrequencyLog* log) {
  if (samples.empty()) throw ParameterError("empty mini-batch");
  if (model.num_classes() != n_classes_) throw ShapeError("model outputs changed");
  grad.set_zero();
  BatchTiming t;
  const double temperature = temperature_;
  const std::size_t k = cfg_.k_or_m;

  if (cfg_.method == Method::dis) {
    // One rank set per mini-batch from the scheduled mixture. Bin j covers
    // ranks [j*C/bins, (j+1)*C/bins), drawn uniformly within the bin.
    Stopwatch sw;
    const ProposalPmf pmf = build_mixture_pmf(mixture_, schedule_b2(mixture_, step));
    const AliasTable table = build_alias(pmf);
    batch_ranks_.resize(k);
    batch_rank_r_.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t bin = table.sample(rng);
      const std::size_t lo = bin_bounds_[bin];
      const std::size_t cnt = bin_bounds_[bin + 1] - lo;
      std::size_t rank = lo;
      if (cnt > 1) rank += std::uniform_int_distribution<std::size_t>(0, cnt - 1)(rng);
      batch_ranks_[j] = static_cast<Rank>(rank);
      batch_rank_r_[j] = pmf.pmf[bin] / static_cast<double>(cnt);
    }
    t.sampling_ns += sw.elapsed_ns();
  }

  for (const std::size_t s : samples) {
    if (s >= data_.size()) throw IndexError("sample index out of range");
    const auto x = data_.input(s);
    const ClassId y = data_.labels[s];
    const Activations acts = forward(model, x);

    if (!uses_subset(cfg_.method)) {
      Stopwatch sw;
      energies_from_repr(model, acts.repr, energies_);
      const ProbVec q = softmax_T(energies_, temperature);
      std::vector<double> w;
      if (cfg_.method == Method::hard_labels) {
        w.resize(n_classes_);
        for (std::size_t c = 0; c < n_classes_; ++c)
          w[c] = ((c == y ? 1.0 : 0.0) - q[c]) / temperature;
      } else {
        w = full_distill_coeffs(q, store_->row(s), y, temperature, lambda_);
      }
      accumulate_energy_grads(model, x, acts, all_classes_, w, grad);
      t.last_layer_ns += sw.elapsed_ns();
      max_evals_ = std::max(max_evals_, n_classes_);
      continue;
    }

    const auto p = store_->row(s);
    if (cfg_.method == Method::pdbs) {
      // Selection needs the full student softmax.
      Stopwatch sw;
      energies_from_repr(model, acts.repr, energies_);
      const ProbVec q = softmax_T(energies_, temperature);
      const std::vector<ClassId> sel = pdbs_select(p, q, k, y);
      student_e_.resize(sel.size());
      energies_from_repr(model, acts.repr, sel, student_e_);
      const auto w = pdbs_coeffs(p, student_e_, sel, temperature);
      accumulate_energy_grads(model, x, acts, sel, w, grad);
      t.last_layer_ns += sw.elapsed_ns();
      if (log != nullptr) record_rank_frequencies(*log, sel, ranks_->class_to_rank_row(s));
      max_evals_ = std::max(max_evals_, n_classes_ + sel.size());
      continue;
    }

    // Importance sampling: target first with r = 1, then the draws.
    Stopwatch sw;
    evaluated_.assign(1, y);
    r_values_.assign(1, 1.0);
    if (cfg_.method == Method::uniform_is) {
      const double r = 1.0 / static_cast<double>(n_classes_);
      for (std::size_t j = 0; j < k; ++j) {
        evaluated_.push_back(uniform_table_.sample(rng));
        r_values_.push_back(r);
      }
    } else if (cfg_.method == Method::ftis) {
      const ProposalPmf prop = proposal_teacher(p, cfg_.teacher_floor);
      const AliasTable table = build_alias(prop);
      for (std::size_t j = 0; j < k; ++j) {
        const ClassId c = table.sample(rng);
        evaluated_.push_back(c);
        r_values_.push_back(prop.pmf[c]);
      }
    } else {
      const auto rank_row = ranks_->rank_to_class_row(s);
      for (std::size_t j = 0; j < batch_ranks_.size(); ++j) {
        evaluated_.push_back(rank_row[batch_ranks_[j]]);
        r_values_.push_back(batch_rank_r_[j]);
      }
    }
    t.sampling_ns += sw.elapsed_ns();

    sw.restart();
    student_e_.resize(evaluated_.size());
    energies_from_repr(model, acts.repr, evaluated_, student_e_);
    // Teacher energies over the evaluated classes only.
    teacher_e_.resize(evaluated_.size());
    energies_from_repr(*teacher_, forward_representation(*teacher_, x), evaluated_, teacher_e_);
    const GradAccumulators acc =
        accumulate_importance_weights(evaluated_, student_e_, teacher_e_, r_values_, temperature);
    accumulate_energy_grads(model, x, acts, evaluated_, acc.coefficients(temperature), grad);
    t.last_layer_ns += sw.elapsed_ns();
    max_evals_ = std::max(max_evals_, evaluated_.size());
  }
  grad.scale(1.0 / static_cast<double>(samples.size()));
  return t;
}

namespace {

double mean_loss(const ModelParams& model, const Dataset& data, const SoftLabelStore* store,
                 LossSettings ls) {
  double total = 0.0;
  std::vector<double> onehot;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const ProbVec q = softmax_T(energies_full(model, data.input(s)), ls.temperature);
    std::span<const double> p;
    if (store != nullptr) {
      p = store->row(s);
    } else {
      onehot.assign(q.size(), 0.0);
      onehot[data.labels[s]] = 1.0;
      p = onehot;
    }
    total += distill_loss(q, p, data.labels[s], ls.lambda);
  }
  return total / static_cast<double>(data.size());
}

bool params_finite(const ModelParams& m) {
  for (auto a : m.arrays())
    if (!all_finite(a)) return false;
  return true;
}

TrainResult run_training(const Dataset& train, const SoftLabelStore* store,
                         const RankMaps* rank_maps, const ModelParams* teacher,
                         ModelParams model, const TrainConfig& cfg, Rng& rng,
                         const Dataset* eval) {
  validate(cfg);
  validate(train);
  validate(model);
  const std::size_t n = train.size();
  if (model.input_dim() != train.dim()) throw ShapeError("dataset dimension != model input");
  const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::uint64_t total_steps = static_cast<std::uint64_t>(batches_per_epoch) * cfg.epochs;
  BatchGradient engine(train, store, rank_maps, teacher, model.num_classes(), cfg, total_steps);
  const LossSettings ls{engine.temperature(), engine.lambda()};

  TrainResult result;
  result.rank_frequencies = RankFrequencyLog(model.num_classes());
  OptimizerState opt = OptimizerState::fresh(cfg.optimizer, model);
  ParamGrad grad = ParamGrad::zeros_like(model);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto record_epoch = [&](std::size_t epoch, double ll_ms, double samp_ms) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = cfg.track_loss ? mean_loss(model, train, store, ls) : nan;
    if (cfg.track_loss && !std::isfinite(rec.train_loss))
      throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch));
    rec.eval_top1 = eval != nullptr ? evaluate_top1(model, *eval) : nan;
    rec.wall_ms_last_layer = ll_ms;
    rec.wall_ms_sampling = samp_ms;
    result.history.push_back(rec);
  };
  record_epoch(0, 0.0, 0.0);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;
  RankFrequencyLog* log = cfg.method == Method::pdbs ? &result.rank_frequencies : nullptr;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    if (log != nullptr) log->start_epoch();
    std::int64_t epoch_ll_ns = 0;
    std::int64_t epoch_samp_ns = 0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      const BatchTiming t = engine.compute(model, batch, step, rng, grad, log);
      if (cfg.optimizer == OptimizerKind::adam)
        adam_step(model, grad, opt, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
      else
        rmsprop_step(model, grad, opt, cfg.learning_rate, cfg.momentum, cfg.decay, cfg.eps);
      ++step;
      result.timing.add(t.last_layer_ns, t.sampling_ns);
      epoch_ll_ns += t.last_layer_ns;
      epoch_samp_ns += t.sampling_ns;
    }
    if (!params_finite(model))
      throw TrainingError("parameters diverged at epoch " + std::to_string(epoch));
    record_epoch(epoch, static_cast<double>(epoch_ll_ns) * 1e-6,
                 static_cast<double>(epoch_samp_ns) * 1e-6);
  }
  result.max_energy_evals_per_sample = engine.max_energy_evals_per_sample();
  result.model = std::move(model);
  return result;
}

}  // namespace

TrainResult train_teacher(const Dataset& train, const ModelSpec& spec, const TrainConfig& cfg,
                          const Dataset* eval) {
  validate(train);
  TrainConfig tc = cfg;
  tc.method = Method::hard_labels;
  Rng rng(tc.seed);
  ModelParams model = init_model(spec, train.dim(), train.n_classes, rng);
  return run_training(train, nullptr, nullptr, nullptr, std::move(model), tc, rng, eval);
}

TrainResult train_student(const Dataset& train, const SoftLabelStore& soft_labels,
                          const RankMaps& rank_maps, const ModelParams& teacher,
                          ModelParams student, const TrainConfig& cfg, const Dataset* eval) {
  Rng rng(cfg.seed);
  return run_training(train, &soft_labels, &rank_maps, &teacher, std::move(student), cfg, rng,
                      eval);
}

TrainResult train_student(const Dataset& train, const SoftLabelStore& soft_labels,
                          const RankMaps& rank_maps, const ModelParams& teacher,
                          const ModelSpec& student_spec, const TrainConfig& cfg,
                          const Dataset* eval) {
  validate(train);
  Rng rng(cfg.seed);
  ModelParams student = init_model(student_spec, train.dim(), train.n_classes, rng);
  return run_training(train, &soft_labels, &rank_maps, &teacher, std::move(student), cfg, rng,
                      eval);
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,train_loss,eval_top1,wall_ms_last_layer,wall_ms_sampling\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.6f,%.6f\n", r.epoch, r.train_loss,
                  r.eval_top1, r.wall_ms_last_layer, r.wall_ms_sampling);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace sdkd
