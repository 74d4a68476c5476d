#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "sdkd/dense.hpp"

namespace sdkd {

using Rng = std::mt19937_64;

// Energies are negative logits: lower energy means higher probability.
using EnergyVec = std::vector<double>;
using ProbVec = std::vector<double>;

enum class Activation { identity, relu };

// On-disk model kind tag of the checkpoint format.
enum class ModelKind : std::int32_t { linear = 0, mlp_relu = 1, mlp_identity = 2 };

// Linear softmax classifier or one-hidden-layer perceptron. The representation
// is x for the linear model and act(x * hidden_weights + hidden_bias) otherwise;
// energies are -(out_weights * repr + out_bias); row k of out_weights is the
// weight vector of class k.
struct ModelParams {
  std::optional<DenseMatrix> hidden_weights;      // d_in x d_repr
  std::optional<std::vector<double>> hidden_bias;  // d_repr
  DenseMatrix out_weights;                         // C x d_repr
  std::vector<double> out_bias;                    // C
  Activation activation = Activation::identity;

  bool is_linear() const { return !hidden_weights.has_value(); }
  std::size_t input_dim() const;
  std::size_t repr_dim() const { return out_weights.cols; }
  std::size_t num_classes() const { return out_weights.rows; }
  ModelKind kind() const;

  // Parameter arrays in declaration order (absent arrays are skipped).
  std::vector<std::span<double>> arrays();
  std::vector<std::span<const double>> arrays() const;

  bool operator==(const ModelParams&) const = default;
};

// Gradient with one array per parameter array of the model, same shapes.
struct ParamGrad {
  std::vector<double> hidden_weights;
  std::vector<double> hidden_bias;
  std::vector<double> out_weights;
  std::vector<double> out_bias;

  static ParamGrad zeros_like(const ModelParams& model);

  std::vector<std::span<double>> arrays();
  std::vector<std::span<const double>> arrays() const;

  void set_zero();
  // this += scale * other
  void add_scaled(const ParamGrad& other, double scale);
  void scale(double factor);
  double l2_norm() const;
  double linf_norm() const;
  std::vector<double> flatten() const;

  bool operator==(const ParamGrad&) const = default;
};

// Throws ShapeError on inconsistent shapes, C < 2, non-finite entries, or a
// linear model with a non-identity activation.
void validate(const ModelParams& model);

ModelParams make_linear(std::size_t d_in, std::size_t num_classes);
ModelParams make_mlp(std::size_t d_in, std::size_t d_hidden, std::size_t num_classes,
                     Activation act = Activation::relu);

// Weights ~ U[-s, s] with s = scale, or 1/sqrt(fan_in) when scale is empty.
// Biases are zeroed.
void init_uniform(ModelParams& model, Rng& rng, std::optional<double> scale = {});

// Cached forward pass of one input. pre_activation is empty for linear models.
struct Activations {
  std::vector<double> pre_activation;
  std::vector<double> repr;
};

Activations forward(const ModelParams& model, std::span<const double> x);

std::vector<double> forward_representation(const ModelParams& model,
                                           std::span<const double> x);

EnergyVec energies_full(const ModelParams& model, std::span<const double> x);
EnergyVec energies_subset(const ModelParams& model, std::span<const double> x,
                          std::span<const ClassId> classes);

// Same as above given an already computed representation. Both routes produce
// bitwise identical values for the same class.
void energies_from_repr(const ModelParams& model, std::span<const double> repr,
                        std::span<double> out);
void energies_from_repr(const ModelParams& model, std::span<const double> repr,
                        std::span<const ClassId> classes, std::span<double> out);

// q_i = exp(-E_i/T) / sum_m exp(-E_m/T), max-shifted.
ProbVec softmax_T(std::span<const double> energies, double temperature);

// out += sum_j coeffs[j] * d(E_{classes[j]})/d(theta). Duplicate class ids each
// contribute their own term.
void accumulate_energy_grads(const ModelParams& model, std::span<const double> x,
                             const Activations& acts, std::span<const ClassId> classes,
                             std::span<const double> coeffs, ParamGrad& out);

ParamGrad energy_param_grad(const ModelParams& model, std::span<const double> x,
                            ClassId class_id);

// argmin of energies, lowest class id on ties.
ClassId predict_top1(const ModelParams& model, std::span<const double> x);
ClassId argmin_energy(std::span<const double> energies);

// "SDKD1" checkpoint: magic, LE int32 kind/d_in/d_repr/C, then LE float64
// parameter arrays in declaration order, with out_weights as d_repr x C.
void save_model(const ModelParams& model, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace sdkd
