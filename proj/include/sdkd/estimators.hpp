#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "sdkd/energy_model.hpp"

namespace sdkd {

// Full-softmax distillation loss at temperature T:
//   lambda * CE(q, p) + (1 - lambda) * CE(q, onehot(y)).
double distill_loss(std::span<const double> q, std::span<const double> p, ClassId y,
                    double lambda);

// Per-class coefficients w_i of the full distillation gradient sum_i w_i dE_i.
std::vector<double> full_distill_coeffs(std::span<const double> q, std::span<const double> p,
                                        ClassId y, double temperature, double lambda);

ParamGrad full_distill_grad(const ModelParams& student, std::span<const double> x,
                            std::span<const double> p, ClassId y, double temperature,
                            double lambda);

// Running sums of the importance-sampled estimator. evaluated[0] is the target
// class (proposal weight 1); the rest are the sampled classes in draw order.
// u and v are stored max-shifted, which cancels in u/U and v/V.
struct GradAccumulators {
  std::vector<ClassId> evaluated;
  std::vector<double> u;
  std::vector<double> v;
  double U = 0.0;
  double V = 0.0;

  // (1/T) * (u_i/U - v_i/V): the weight of dE_i in the estimate.
  std::vector<double> coefficients(double temperature) const;
};

// Builds the accumulators from student/teacher energies over the evaluated
// classes and their proposal probabilities (r[0] must be 1 for the target).
GradAccumulators accumulate_importance_weights(std::span<const ClassId> evaluated,
                                               std::span<const double> student_energies,
                                               std::span<const double> teacher_energies,
                                               std::span<const double> r_values,
                                               double temperature);

// Importance-sampled distillation gradient (lambda = 1). teacher_energies
// covers [y, classes...] in that order; r_values covers classes only.
ParamGrad is_distill_grad(const ModelParams& student, std::span<const double> teacher_energies,
                          std::span<const double> x, ClassId y,
                          std::span<const ClassId> classes, std::span<const double> r_values,
                          double temperature);

// The k classes with largest |p_i - q_i| (lower id first on ties), with y
// swapped in for the weakest pick when missing. Returned in ascending id order.
std::vector<ClassId> pdbs_select(std::span<const double> p, std::span<const double> q,
                                 std::size_t k, ClassId y);

// Coefficients (1/T)(p~_i - q~_i) of the partial-softmax loss over the sorted
// selection. p~ is p renormalized over the selection.
std::vector<double> pdbs_coeffs(std::span<const double> p,
                                std::span<const double> subset_energies,
                                std::span<const ClassId> sorted_selection, double temperature);

ParamGrad pdbs_grad(const ModelParams& student, std::span<const double> x,
                    std::span<const double> p, std::span<const ClassId> selection,
                    double temperature);

// Per-epoch counts of how often each teacher rank was selected.
struct RankFrequencyLog {
  std::size_t n_ranks = 0;
  std::vector<std::vector<std::uint64_t>> epochs;

  explicit RankFrequencyLog(std::size_t ranks = 0) : n_ranks(ranks) {}
  void start_epoch() { epochs.emplace_back(n_ranks, 0); }
  std::uint64_t total(std::size_t epoch) const;
  std::vector<double> normalized(std::size_t epoch) const;
};

void record_rank_frequencies(RankFrequencyLog& log, std::span<const ClassId> selected,
                             std::span<const Rank> class_to_rank);

// CSV: epoch,rank,count,normalized_frequency (epochs numbered from 1).
void write_rank_frequency_csv(const RankFrequencyLog& log, const std::filesystem::path& path);

}  // namespace sdkd
