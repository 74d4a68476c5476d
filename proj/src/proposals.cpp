#include "sdkd/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sdkd {

void validate(const LaplaceMixtureConfig& cfg) {
  if (!(cfg.b1 > 0.0) || !(cfg.b2_init > 0.0) || !(cfg.b2_final > 0.0))
    throw ParameterError("mixture scales must be > 0");
  if (cfg.b2_final < cfg.b2_init) throw ParameterError("mixture b2_final must be >= b2_init");
  if (cfg.bins < 2) throw ParameterError("mixture needs at least 2 bins");
  if (cfg.schedule_steps == 0) throw ParameterError("mixture schedule_steps must be >= 1");
}

double laplace_density(double x, double mu, double b) {
  if (!(b > 0.0)) throw ParameterError("Laplace scale must be > 0");
  return std::exp(-std::abs(x - mu) / b) / (2.0 * b);
}

ProposalPmf build_mixture_pmf(const LaplaceMixtureConfig& cfg, double b2_current) {
  validate(cfg);
  if (!(b2_current > 0.0)) throw ParameterError("mixture b2 must be > 0");
  const double unit = cfg.scale_units == ScaleUnits::percent_of_axis ? 0.01 : 1.0;
  const double b1 = cfg.b1 * unit;
  const double b2 = b2_current * unit;
  ProposalPmf out;
  out.domain = ProposalDomain::ranks;
  out.pmf.resize(cfg.bins);
  const double m = static_cast<double>(cfg.bins);
  double total = 0.0;
  for (std::size_t j = 0; j < cfg.bins; ++j) {
    const double center = (static_cast<double>(j) + 0.5) / m;
    out.pmf[j] = laplace_density(center, cfg.mu1, b1) + laplace_density(center, cfg.mu2, b2);
    total += out.pmf[j];
  }
  if (!(total > 0.0) || !std::isfinite(total))
    throw NumericError("mixture density underflowed at every bin center");
  for (double& v : out.pmf) v /= total;
  return out;
}

double schedule_b2(const LaplaceMixtureConfig& cfg, std::uint64_t step) {
  const double frac = static_cast<double>(std::min(step, cfg.schedule_steps)) /
                      static_cast<double>(cfg.schedule_steps);
  return cfg.b2_init + (cfg.b2_final - cfg.b2_init) * frac;
}

ProposalPmf proposal_uniform(std::size_t n_classes) {
  if (n_classes == 0) throw ParameterError("uniform proposal over zero classes");
  return {std::vector<double>(n_classes, 1.0 / static_cast<double>(n_classes)),
          ProposalDomain::classes};
}

ProposalPmf proposal_teacher(std::span<const double> p, double floor) {
  if (p.empty()) throw ParameterError("teacher proposal over zero classes");
  if (!(floor >= 0.0)) throw ParameterError("probability floor must be >= 0");
  ProposalPmf out;
  out.domain = ProposalDomain::classes;
  out.pmf.resize(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.pmf[i] = std::max(p[i], floor);
    total += out.pmf[i];
  }
  if (!(total > 0.0)) throw ParameterError("teacher proposal has zero mass");
  for (double& v : out.pmf) v /= total;
  return out;
}

AliasTable build_alias(std::span<const double> pmf) {
  const std::size_t n = pmf.size();
  if (n == 0) throw ParameterError("alias table of an empty pmf");
  double total = 0.0;
  for (double v : pmf) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ParameterError("pmf entries must be finite and >= 0");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ParameterError("pmf is not normalized");

  AliasTable t;
  t.prob.assign(n, 0.0);
  t.alias.resize(n);
  std::iota(t.alias.begin(), t.alias.end(), 0u);
  std::vector<double> scaled(n);
  std::vector<std::uint32_t> small, large;
  small.reserve(n);
  large.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    scaled[i] = pmf[i] * static_cast<double>(n);
    (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
  }
  while (!small.empty() && !large.empty()) {
    const std::uint32_t s = small.back();
    small.pop_back();
    const std::uint32_t l = large.back();
    t.prob[s] = scaled[s];
    t.alias[s] = l;
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  // Leftovers are 1 up to rounding.
  for (std::uint32_t i : large) t.prob[i] = 1.0;
  for (std::uint32_t i : small) t.prob[i] = 1.0;
  return t;
}

AliasTable build_alias(const ProposalPmf& pmf) { return build_alias(std::span<const double>(pmf.pmf)); }

std::uint32_t AliasTable::sample(Rng& rng) const {
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(prob.size() - 1));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const std::uint32_t i = pick(rng);
  return coin(rng) < prob[i] ? i : alias[i];
}

std::vector<double> AliasTable::reconstruct() const {
  const double n = static_cast<double>(prob.size());
  std::vector<double> pmf(prob.size(), 0.0);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    pmf[i] += prob[i] / n;
    pmf[alias[i]] += (1.0 - prob[i]) / n;
  }
  return pmf;
}

std::vector<std::uint32_t> sample_indices(const AliasTable& table, std::size_t n_draws, Rng& rng) {
  std::vector<std::uint32_t> out(n_draws);
  for (auto& v : out) v = table.sample(rng);
  return out;
}

}  // namespace sdkd
