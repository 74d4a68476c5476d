#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sdkd/data.hpp"
#include "sdkd/energy_model.hpp"
#include "sdkd/estimators.hpp"
#include "sdkd/proposals.hpp"
#include "sdkd/soft_labels.hpp"
#include "sdkd/timing.hpp"

namespace sdkd {

enum class Method { hard_labels, distillation, pdbs, uniform_is, ftis, dis };
enum class OptimizerKind { adam, rmsprop };

std::string_view to_string(Method m);
// Throws ConfigError on unknown names.
Method parse_method(std::string_view name);
std::string_view to_string(OptimizerKind o);
OptimizerKind parse_optimizer(std::string_view name);

bool is_sampled(Method m);  // uniform_is, ftis, dis
bool uses_subset(Method m);  // pdbs and the sampled methods

struct TrainConfig {
  Method method = Method::distillation;
  std::size_t k_or_m = 10;
  double temperature = 1.0;
  double lambda = 1.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double momentum = 0.9;
  double decay = 0.9;
  std::uint64_t seed = 0;
  // Floor applied to teacher probabilities in the FTIS proposal.
  double teacher_floor = 1e-6;
  // bins == 0 means one bin per rank; schedule_steps == 0 means the total
  // number of optimizer steps of the run.
  LaplaceMixtureConfig mixture{0.0, 3.0, 1.0, 5.0, 500.0, 0, 0, ScaleUnits::percent_of_axis};
  // Compute the full training loss at every epoch end (not timed).
  bool track_loss = true;
};

// Throws ConfigError on invalid settings.
void validate(const TrainConfig& cfg);

// Architecture of a freshly initialized model. hidden == 0 gives the linear
// model. init_scale empty means 1/sqrt(fan_in).
struct ModelSpec {
  std::size_t hidden = 0;
  Activation activation = Activation::relu;
  std::optional<double> init_scale;
};

ModelParams init_model(const ModelSpec& spec, std::size_t d_in, std::size_t n_classes, Rng& rng);

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  // adam: first/second moments; rmsprop: mean square / momentum buffer.
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::uint64_t step = 0;

  static OptimizerState fresh(OptimizerKind kind, const ModelParams& model);
  bool operator==(const OptimizerState&) const = default;
};

void adam_step(ModelParams& params, const ParamGrad& grad, OptimizerState& state, double lr,
               double beta1, double beta2, double eps);

// ms = decay*ms + (1-decay)*g^2; mom = momentum*mom + lr*g/sqrt(ms+eps);
// theta -= mom.
void rmsprop_step(ModelParams& params, const ParamGrad& grad, OptimizerState& state, double lr,
                  double momentum, double decay, double eps);

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the state before training
  double train_loss = 0.0;
  double eval_top1 = 0.0;  // NaN when no eval set was given
  double wall_ms_last_layer = 0.0;
  double wall_ms_sampling = 0.0;
};

struct TrainResult {
  ModelParams model;
  std::vector<EpochRecord> history;
  RankFrequencyLog rank_frequencies;  // PDBS selections, by epoch
  TimingRecord timing;                // one entry per mini-batch
  // Largest number of student output energies evaluated for one sample.
  std::size_t max_energy_evals_per_sample = 0;
};

// Wall time of one mini-batch gradient, split as in TimingRecord.
struct BatchTiming {
  std::int64_t last_layer_ns = 0;
  std::int64_t sampling_ns = 0;
};

// Mean per-sample gradient of one mini-batch for the configured method. Used
// by the training loop and by the timing harness so both measure the same
// code path.
class BatchGradient {
 public:
  // soft_labels, rank_maps and teacher may be null for hard-label training.
  // total_steps resolves a zero mixture.schedule_steps.
  BatchGradient(const Dataset& data, const SoftLabelStore* soft_labels, const RankMaps* rank_maps,
                const ModelParams* teacher, std::size_t n_classes, const TrainConfig& cfg,
                std::uint64_t total_steps);

  // Overwrites grad. step drives the mixture schedule. log, when given,
  // receives the PDBS selections.
  BatchTiming compute(const ModelParams& model, std::span<const std::size_t> samples,
                      std::uint64_t step, Rng& rng, ParamGrad& grad,
                      RankFrequencyLog* log = nullptr);

  std::size_t max_energy_evals_per_sample() const { return max_evals_; }
  const LaplaceMixtureConfig& mixture() const { return mixture_; }
  // Loss temperature and lambda actually used by the method.
  double temperature() const { return temperature_; }
  double lambda() const { return lambda_; }

 private:
  const Dataset& data_;
  const SoftLabelStore* store_;
  const RankMaps* ranks_;
  const ModelParams* teacher_;
  TrainConfig cfg_;
  LaplaceMixtureConfig mixture_;
  double temperature_;
  double lambda_;
  std::size_t n_classes_;
  std::vector<std::size_t> bin_bounds_;
  AliasTable uniform_table_;
  std::vector<ClassId> all_classes_;
  std::size_t max_evals_ = 0;
  EnergyVec energies_;
  std::vector<ClassId> evaluated_;
  std::vector<double> r_values_;
  std::vector<double> student_e_;
  std::vector<double> teacher_e_;
  std::vector<Rank> batch_ranks_;
  std::vector<double> batch_rank_r_;
};

// Hard-label (lambda = 0, T = 1) training from a fresh initialization.
TrainResult train_teacher(const Dataset& train, const ModelSpec& spec, const TrainConfig& cfg,
                          const Dataset* eval = nullptr);

// Student training with any method. The soft labels and rank maps must be
// aligned with `train`; the teacher provides energies for sampled classes.
TrainResult train_student(const Dataset& train, const SoftLabelStore& soft_labels,
                          const RankMaps& rank_maps, const ModelParams& teacher,
                          ModelParams student, const TrainConfig& cfg,
                          const Dataset* eval = nullptr);

// Overload that initializes the student from spec using cfg.seed.
TrainResult train_student(const Dataset& train, const SoftLabelStore& soft_labels,
                          const RankMaps& rank_maps, const ModelParams& teacher,
                          const ModelSpec& student_spec, const TrainConfig& cfg,
                          const Dataset* eval = nullptr);

double evaluate_top1(const ModelParams& model, const Dataset& data);

// CSV: epoch,train_loss,eval_top1,wall_ms_last_layer,wall_ms_sampling
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace sdkd
