#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sdkd/energy_model.hpp"

namespace sdkd {

enum class ProposalDomain { ranks, classes };

struct ProposalPmf {
  std::vector<double> pmf;
  ProposalDomain domain = ProposalDomain::classes;
};

enum class ScaleUnits { normalized, percent_of_axis };

// Two-Laplace mixture over the normalized rank axis [0,1]. The left component
// is fixed; the right scale grows linearly from b2_init to b2_final over
// schedule_steps. With percent_of_axis, locations stay on [0,1] and scales are
// divided by 100 (b1 = 3 means 0.03 of the axis).
struct LaplaceMixtureConfig {
  double mu1 = 0.0;
  double b1 = 3.0;
  double mu2 = 1.0;
  double b2_init = 5.0;
  double b2_final = 500.0;
  std::size_t bins = 100;
  std::uint64_t schedule_steps = 1;
  ScaleUnits scale_units = ScaleUnits::percent_of_axis;
};

// Throws ParameterError on non-positive scales, b2_final < b2_init or bins < 2.
void validate(const LaplaceMixtureConfig& cfg);

double laplace_density(double x, double mu, double b);

// pmf over cfg.bins ranks: the mixture density at bin centers (j + 0.5)/bins,
// normalized to sum 1.
ProposalPmf build_mixture_pmf(const LaplaceMixtureConfig& cfg, double b2_current);

double schedule_b2(const LaplaceMixtureConfig& cfg, std::uint64_t step);

ProposalPmf proposal_uniform(std::size_t n_classes);

// r_i proportional to max(p_i, floor).
ProposalPmf proposal_teacher(std::span<const double> p, double floor);

// Walker/Vose alias table: O(m) construction, O(1) exact sampling.
struct AliasTable {
  std::vector<double> prob;
  std::vector<std::uint32_t> alias;

  std::size_t size() const { return prob.size(); }
  std::uint32_t sample(Rng& rng) const;
  // The pmf encoded by the table.
  std::vector<double> reconstruct() const;
};

// Throws ParameterError unless the pmf is nonnegative, non-empty and sums to 1
// within 1e-9.
AliasTable build_alias(const ProposalPmf& pmf);
AliasTable build_alias(std::span<const double> pmf);

std::vector<std::uint32_t> sample_indices(const AliasTable& table, std::size_t n_draws, Rng& rng);

}  // namespace sdkd
