#pragma once

// Reference implementations used as test oracles. They share no code with the
// library beyond the parameter containers.

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sdkd/energy_model.hpp"

namespace oracle {

using sdkd::ClassId;
using sdkd::ModelParams;

// W[r][k] in the d_repr x C convention.
inline double w_out(const ModelParams& m, std::size_t r, std::size_t k) {
  return m.out_weights.data[k * m.out_weights.cols + r];
}

inline std::vector<double> representation(const ModelParams& m, const std::vector<double>& x) {
  if (!m.hidden_weights) return x;
  const auto& h = *m.hidden_weights;
  std::vector<double> out(h.cols);
  for (std::size_t j = 0; j < h.cols; ++j) {
    long double z = (*m.hidden_bias)[j];
    for (std::size_t i = 0; i < h.rows; ++i) z += static_cast<long double>(x[i]) * h.data[i * h.cols + j];
    double v = static_cast<double>(z);
    if (m.activation == sdkd::Activation::relu && v < 0) v = 0;
    out[j] = v;
  }
  return out;
}

inline std::vector<double> energies(const ModelParams& m, const std::vector<double>& x) {
  const auto phi = representation(m, x);
  const std::size_t c = m.out_bias.size();
  std::vector<double> e(c);
  for (std::size_t k = 0; k < c; ++k) {
    long double s = m.out_bias[k];
    for (std::size_t r = 0; r < phi.size(); ++r) s += static_cast<long double>(phi[r]) * w_out(m, r, k);
    e[k] = -static_cast<double>(s);
  }
  return e;
}

inline std::vector<double> softmax(const std::vector<double>& e, double t) {
  long double lo = e[0];
  for (double v : e) lo = std::min<long double>(lo, v);
  std::vector<long double> ex(e.size());
  long double z = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    ex[i] = std::exp(-(e[i] - lo) / t);
    z += ex[i];
  }
  std::vector<double> q(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) q[i] = static_cast<double>(ex[i] / z);
  return q;
}

// lambda * CE(q, p) + (1 - lambda) * CE(q, y), with log q in long double.
inline double distill_loss(const ModelParams& m, const std::vector<double>& x,
                           const std::vector<double>& p, ClassId y, double t, double lambda) {
  const auto e = energies(m, x);
  long double lo = e[0];
  for (double v : e) lo = std::min<long double>(lo, v);
  long double z = 0;
  for (double v : e) z += std::exp(-(v - lo) / t);
  const long double logz = std::log(z);
  long double loss = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const long double logq = -(e[i] - lo) / t - logz;
    const double target = lambda * p[i] + (1 - lambda) * (i == y ? 1.0 : 0.0);
    loss -= target * logq;
  }
  return static_cast<double>(loss);
}

// Cross-entropy between p renormalized over S and the softmax over S only.
inline double restricted_loss(const ModelParams& m, const std::vector<double>& x,
                              const std::vector<double>& p, const std::vector<ClassId>& s,
                              double t) {
  const auto e = energies(m, x);
  long double pm = 0, lo = e[s[0]];
  for (ClassId c : s) {
    pm += p[c];
    lo = std::min<long double>(lo, e[c]);
  }
  long double z = 0;
  for (ClassId c : s) z += std::exp(-(e[c] - lo) / t);
  long double loss = 0;
  for (ClassId c : s) loss -= (p[c] / pm) * (-(e[c] - lo) / t - std::log(z));
  return static_cast<double>(loss);
}

// Central differences of f over every parameter, flattened in array order.
inline std::vector<double> finite_diff(ModelParams m, const std::function<double(const ModelParams&)>& f,
                                       double h = 1e-5) {
  std::vector<double> g;
  auto arrays = m.arrays();
  for (auto a : arrays) {
    for (double& v : a) {
      const double keep = v;
      v = keep + h;
      const double up = f(m);
      v = keep - h;
      const double down = f(m);
      v = keep;
      g.push_back((up - down) / (2 * h));
    }
  }
  return g;
}

inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  long double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (long double)(a[i] - b[i]) * (a[i] - b[i]);
    den += (long double)b[i] * b[i];
  }
  return static_cast<double>(std::sqrt(num) / std::max<long double>(std::sqrt(den), 1e-12L));
}

inline double linf(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::vector<double> random_probs(std::size_t c, std::mt19937_64& rng) {
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> p(c);
  double s = 0;
  for (double& v : p) s += (v = ex(rng));
  for (double& v : p) v /= s;
  return p;
}

inline std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sdkd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
