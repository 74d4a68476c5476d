#include "sdkd/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>

namespace sdkd {

namespace {

void check_temperature(double t) {
  if (!(t > 0.0)) throw ParameterError("temperature must be > 0");
}

// Shared by the full and partial paths so that a full selection reproduces the
// full gradient bit for bit.
inline double distill_coeff(double p, double q, double temperature) {
  return (p - q) / temperature;
}

}  // namespace

double distill_loss(std::span<const double> q, std::span<const double> p, ClassId y,
                    double lambda) {
  if (q.size() != p.size()) throw ShapeError("q/p length mismatch");
  if (y >= q.size()) throw IndexError("target class out of range");
  double soft = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i)
    if (p[i] > 0.0) soft -= p[i] * std::log(std::max(q[i], 1e-300));
  const double hard = -std::log(std::max(q[y], 1e-300));
  return lambda * soft + (1.0 - lambda) * hard;
}

std::vector<double> full_distill_coeffs(std::span<const double> q, std::span<const double> p,
                                        ClassId y, double temperature, double lambda) {
  check_temperature(temperature);
  if (q.size() != p.size()) throw ShapeError("q/p length mismatch");
  if (y >= q.size()) throw IndexError("target class out of range");
  std::vector<double> w(q.size());
  if (lambda == 1.0) {
    for (std::size_t i = 0; i < q.size(); ++i) w[i] = distill_coeff(p[i], q[i], temperature);
    return w;
  }
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double onehot = i == y ? 1.0 : 0.0;
    w[i] = (lambda * (p[i] - q[i]) + (1.0 - lambda) * (onehot - q[i])) / temperature;
  }
  return w;
}

ParamGrad full_distill_grad(const ModelParams& student, std::span<const double> x,
                            std::span<const double> p, ClassId y, double temperature,
                            double lambda) {
  check_temperature(temperature);
  if (p.size() != student.num_classes()) throw ShapeError("soft label length != classes");
  const Activations acts = forward(student, x);
  EnergyVec e(student.num_classes());
  energies_from_repr(student, acts.repr, e);
  const ProbVec q = softmax_T(e, temperature);
  const auto w = full_distill_coeffs(q, p, y, temperature, lambda);
  std::vector<ClassId> all(student.num_classes());
  std::iota(all.begin(), all.end(), ClassId{0});
  ParamGrad g = ParamGrad::zeros_like(student);
  accumulate_energy_grads(student, x, acts, all, w, g);
  return g;
}

std::vector<double> GradAccumulators::coefficients(double temperature) const {
  std::vector<double> c(evaluated.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = (u[i] / U - v[i] / V) / temperature;
  return c;
}

GradAccumulators accumulate_importance_weights(std::span<const ClassId> evaluated,
                                               std::span<const double> student_energies,
                                               std::span<const double> teacher_energies,
                                               std::span<const double> r_values,
                                               double temperature) {
  check_temperature(temperature);
  const std::size_t n = evaluated.size();
  if (n == 0) throw ParameterError("importance estimator needs the target class");
  if (student_energies.size() != n || teacher_energies.size() != n || r_values.size() != n)
    throw ShapeError("importance estimator inputs have mismatched lengths");
  if (r_values[0] != 1.0) throw ParameterError("the target class enters with r = 1");
  for (double r : r_values)
    if (!(r > 0.0)) throw ParameterError("proposal probability must be > 0");

  const double s_min = *std::min_element(student_energies.begin(), student_energies.end());
  const double t_min = *std::min_element(teacher_energies.begin(), teacher_energies.end());
  GradAccumulators acc;
  acc.evaluated.assign(evaluated.begin(), evaluated.end());
  acc.u.resize(n);
  acc.v.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    acc.v[i] = std::exp(-(student_energies[i] - s_min) / temperature) / r_values[i];
    acc.u[i] = std::exp(-(teacher_energies[i] - t_min) / temperature) / r_values[i];
    acc.V += acc.v[i];
    acc.U += acc.u[i];
  }
  if (!std::isfinite(acc.U) || !std::isfinite(acc.V) || !(acc.U > 0.0) || !(acc.V > 0.0))
    throw NumericError("non-finite importance weights");
  return acc;
}

ParamGrad is_distill_grad(const ModelParams& student, std::span<const double> teacher_energies,
                          std::span<const double> x, ClassId y,
                          std::span<const ClassId> classes, std::span<const double> r_values,
                          double temperature) {
  if (r_values.size() != classes.size()) throw ShapeError("one proposal value per sampled class");
  if (y >= student.num_classes()) throw IndexError("target class out of range");
  std::vector<ClassId> evaluated;
  evaluated.reserve(classes.size() + 1);
  evaluated.push_back(y);
  evaluated.insert(evaluated.end(), classes.begin(), classes.end());
  std::vector<double> r;
  r.reserve(evaluated.size());
  r.push_back(1.0);
  r.insert(r.end(), r_values.begin(), r_values.end());

  const Activations acts = forward(student, x);
  std::vector<double> es(evaluated.size());
  energies_from_repr(student, acts.repr, evaluated, es);
  const GradAccumulators acc =
      accumulate_importance_weights(evaluated, es, teacher_energies, r, temperature);
  ParamGrad g = ParamGrad::zeros_like(student);
  accumulate_energy_grads(student, x, acts, evaluated, acc.coefficients(temperature), g);
  return g;
}

std::vector<ClassId> pdbs_select(std::span<const double> p, std::span<const double> q,
                                 std::size_t k, ClassId y) {
  const std::size_t c = p.size();
  if (q.size() != c) throw ShapeError("p/q length mismatch");
  if (k < 1 || k > c) throw ParameterError("pdbs subset size must be in [1, C]");
  if (y >= c) throw IndexError("target class out of range");
  std::vector<ClassId> order(c);
  std::iota(order.begin(), order.end(), ClassId{0});
  auto by_diff = [&](ClassId a, ClassId b) {
    const double da = std::abs(p[a] - q[a]);
    const double db = std::abs(p[b] - q[b]);
    return da > db || (da == db && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    by_diff);
  order.resize(k);
  if (std::find(order.begin(), order.end(), y) == order.end()) order.back() = y;
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<double> pdbs_coeffs(std::span<const double> p,
                                std::span<const double> subset_energies,
                                std::span<const ClassId> sorted_selection, double temperature) {
  const std::size_t n = sorted_selection.size();
  if (n == 0) throw ParameterError("pdbs selection is empty");
  if (subset_energies.size() != n) throw ShapeError("one energy per selected class");
  double mass = 0.0;
  for (ClassId c : sorted_selection) mass += p[c];
  if (!(mass > 0.0)) throw DegenerateSelectionError("teacher mass on the selection is zero");
  const ProbVec q = softmax_T(subset_energies, temperature);
  // A selection covering every class is the full softmax; p is used as is.
  const bool full = n == p.size();
  std::vector<double> w(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double pj = full ? p[sorted_selection[j]] : p[sorted_selection[j]] / mass;
    w[j] = distill_coeff(pj, q[j], temperature);
  }
  return w;
}

ParamGrad pdbs_grad(const ModelParams& student, std::span<const double> x,
                    std::span<const double> p, std::span<const ClassId> selection,
                    double temperature) {
  check_temperature(temperature);
  if (p.size() != student.num_classes()) throw ShapeError("soft label length != classes");
  std::vector<ClassId> s(selection.begin(), selection.end());
  std::sort(s.begin(), s.end());
  if (std::adjacent_find(s.begin(), s.end()) != s.end())
    throw ParameterError("pdbs selection must not contain duplicates");
  const Activations acts = forward(student, x);
  std::vector<double> e(s.size());
  energies_from_repr(student, acts.repr, s, e);
  const auto w = pdbs_coeffs(p, e, s, temperature);
  ParamGrad g = ParamGrad::zeros_like(student);
  accumulate_energy_grads(student, x, acts, s, w, g);
  return g;
}

std::uint64_t RankFrequencyLog::total(std::size_t epoch) const {
  const auto& c = epochs.at(epoch);
  return std::accumulate(c.begin(), c.end(), std::uint64_t{0});
}

std::vector<double> RankFrequencyLog::normalized(std::size_t epoch) const {
  const auto& c = epochs.at(epoch);
  const double t = static_cast<double>(total(epoch));
  std::vector<double> out(c.size(), 0.0);
  if (t > 0.0)
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = static_cast<double>(c[i]) / t;
  return out;
}

void record_rank_frequencies(RankFrequencyLog& log, std::span<const ClassId> selected,
                             std::span<const Rank> class_to_rank) {
  if (log.epochs.empty()) log.start_epoch();
  auto& counts = log.epochs.back();
  for (ClassId c : selected) {
    if (c >= class_to_rank.size()) throw IndexError("selected class out of range");
    ++counts.at(class_to_rank[c]);
  }
}

void write_rank_frequency_csv(const RankFrequencyLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,rank,count,normalized_frequency\n";
  char buf[64];
  for (std::size_t e = 0; e < log.epochs.size(); ++e) {
    const auto freq = log.normalized(e);
    for (std::size_t r = 0; r < log.n_ranks; ++r) {
      std::snprintf(buf, sizeof buf, "%.17g", freq[r]);
      out << (e + 1) << ',' << r << ',' << log.epochs[e][r] << ',' << buf << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace sdkd
