#include "sdkd/energy_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "binary_io.hpp"

namespace sdkd {

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void validate(const DenseMatrix& m) {
  if (m.data.size() != m.rows * m.cols)
    throw ShapeError("matrix data length " + std::to_string(m.data.size()) + " != " +
                     std::to_string(m.rows) + "x" + std::to_string(m.cols));
  if (!all_finite(m.data)) throw ShapeError("matrix contains non-finite entries");
}

std::size_t ModelParams::input_dim() const {
  return hidden_weights ? hidden_weights->rows : out_weights.cols;
}

ModelKind ModelParams::kind() const {
  if (is_linear()) return ModelKind::linear;
  return activation == Activation::relu ? ModelKind::mlp_relu : ModelKind::mlp_identity;
}

std::vector<std::span<double>> ModelParams::arrays() {
  std::vector<std::span<double>> out;
  if (hidden_weights) out.emplace_back(hidden_weights->data);
  if (hidden_bias) out.emplace_back(*hidden_bias);
  out.emplace_back(out_weights.data);
  out.emplace_back(out_bias);
  return out;
}

std::vector<std::span<const double>> ModelParams::arrays() const {
  std::vector<std::span<const double>> out;
  if (hidden_weights) out.emplace_back(hidden_weights->data);
  if (hidden_bias) out.emplace_back(*hidden_bias);
  out.emplace_back(out_weights.data);
  out.emplace_back(out_bias);
  return out;
}

void validate(const ModelParams& model) {
  validate(model.out_weights);
  const std::size_t c = model.num_classes();
  if (c < 2) throw ShapeError("model needs at least 2 classes");
  if (model.out_bias.size() != c) throw ShapeError("out_bias length != number of classes");
  if (!all_finite(model.out_bias)) throw ShapeError("out_bias contains non-finite entries");
  if (model.hidden_weights.has_value() != model.hidden_bias.has_value())
    throw ShapeError("hidden weights and hidden bias must be both present or both absent");
  if (model.is_linear()) {
    if (model.activation != Activation::identity)
      throw ShapeError("linear model must use the identity activation");
    return;
  }
  validate(*model.hidden_weights);
  if (model.hidden_weights->cols != model.repr_dim())
    throw ShapeError("hidden layer width != out_weights columns");
  if (model.hidden_bias->size() != model.repr_dim())
    throw ShapeError("hidden_bias length != hidden layer width");
  if (!all_finite(*model.hidden_bias)) throw ShapeError("hidden_bias contains non-finite entries");
}

ModelParams make_linear(std::size_t d_in, std::size_t num_classes) {
  ModelParams m;
  m.out_weights = DenseMatrix(num_classes, d_in);
  m.out_bias.assign(num_classes, 0.0);
  m.activation = Activation::identity;
  validate(m);
  return m;
}

ModelParams make_mlp(std::size_t d_in, std::size_t d_hidden, std::size_t num_classes,
                     Activation act) {
  ModelParams m;
  m.hidden_weights = DenseMatrix(d_in, d_hidden);
  m.hidden_bias = std::vector<double>(d_hidden, 0.0);
  m.out_weights = DenseMatrix(num_classes, d_hidden);
  m.out_bias.assign(num_classes, 0.0);
  m.activation = act;
  validate(m);
  return m;
}

void init_uniform(ModelParams& model, Rng& rng, std::optional<double> scale) {
  auto fill = [&](DenseMatrix& w, std::size_t fan_in) {
    const double s = scale.value_or(1.0 / std::sqrt(static_cast<double>(fan_in)));
    std::uniform_real_distribution<double> dist(-s, s);
    for (double& v : w.data) v = dist(rng);
  };
  if (model.hidden_weights) {
    fill(*model.hidden_weights, model.hidden_weights->rows);
    std::fill(model.hidden_bias->begin(), model.hidden_bias->end(), 0.0);
  }
  fill(model.out_weights, model.repr_dim());
  std::fill(model.out_bias.begin(), model.out_bias.end(), 0.0);
}

ParamGrad ParamGrad::zeros_like(const ModelParams& model) {
  ParamGrad g;
  if (model.hidden_weights) {
    g.hidden_weights.assign(model.hidden_weights->data.size(), 0.0);
    g.hidden_bias.assign(model.hidden_bias->size(), 0.0);
  }
  g.out_weights.assign(model.out_weights.data.size(), 0.0);
  g.out_bias.assign(model.out_bias.size(), 0.0);
  return g;
}

std::vector<std::span<double>> ParamGrad::arrays() {
  std::vector<std::span<double>> out;
  if (!hidden_weights.empty()) {
    out.emplace_back(hidden_weights);
    out.emplace_back(hidden_bias);
  }
  out.emplace_back(out_weights);
  out.emplace_back(out_bias);
  return out;
}

std::vector<std::span<const double>> ParamGrad::arrays() const {
  std::vector<std::span<const double>> out;
  if (!hidden_weights.empty()) {
    out.emplace_back(hidden_weights);
    out.emplace_back(hidden_bias);
  }
  out.emplace_back(out_weights);
  out.emplace_back(out_bias);
  return out;
}

void ParamGrad::set_zero() {
  for (auto a : arrays()) std::fill(a.begin(), a.end(), 0.0);
}

void ParamGrad::add_scaled(const ParamGrad& other, double s) {
  auto mine = arrays();
  auto theirs = other.arrays();
  if (mine.size() != theirs.size()) throw ShapeError("gradient shapes differ");
  for (std::size_t a = 0; a < mine.size(); ++a) {
    if (mine[a].size() != theirs[a].size()) throw ShapeError("gradient shapes differ");
    for (std::size_t i = 0; i < mine[a].size(); ++i) mine[a][i] += s * theirs[a][i];
  }
}

void ParamGrad::scale(double factor) {
  for (auto a : arrays())
    for (double& v : a) v *= factor;
}

double ParamGrad::l2_norm() const {
  double s = 0.0;
  for (auto a : arrays())
    for (double v : a) s += v * v;
  return std::sqrt(s);
}

double ParamGrad::linf_norm() const {
  double m = 0.0;
  for (auto a : arrays())
    for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

std::vector<double> ParamGrad::flatten() const {
  std::vector<double> out;
  for (auto a : arrays()) out.insert(out.end(), a.begin(), a.end());
  return out;
}

namespace {

void check_input(const ModelParams& model, std::span<const double> x) {
  if (x.size() != model.input_dim())
    throw ShapeError("input length " + std::to_string(x.size()) + " != model input dimension " +
                     std::to_string(model.input_dim()));
}

void check_class(const ModelParams& model, ClassId c) {
  if (c >= model.num_classes())
    throw IndexError("class id " + std::to_string(c) + " out of range [0," +
                     std::to_string(model.num_classes()) + ")");
}

}  // namespace

Activations forward(const ModelParams& model, std::span<const double> x) {
  check_input(model, x);
  Activations acts;
  if (model.is_linear()) {
    acts.repr.assign(x.begin(), x.end());
    return acts;
  }
  const DenseMatrix& w = *model.hidden_weights;
  const std::size_t h = w.cols;
  acts.pre_activation.assign(h, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double xi = x[i];
    const double* wr = w.data.data() + i * h;
    for (std::size_t r = 0; r < h; ++r) acts.pre_activation[r] += xi * wr[r];
  }
  acts.repr.resize(h);
  for (std::size_t r = 0; r < h; ++r) {
    const double z = acts.pre_activation[r] + (*model.hidden_bias)[r];
    acts.pre_activation[r] = z;
    acts.repr[r] = (model.activation == Activation::relu && z < 0.0) ? 0.0 : z;
  }
  return acts;
}

std::vector<double> forward_representation(const ModelParams& model,
                                           std::span<const double> x) {
  return forward(model, x).repr;
}

namespace {

// Fixed summation order so full and subset energies agree bitwise.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

void energies_from_repr(const ModelParams& model, std::span<const double> repr,
                        std::span<double> out) {
  const std::size_t c = model.num_classes();
  const std::size_t d = model.repr_dim();
  if (repr.size() != d || out.size() != c) throw ShapeError("energies_from_repr: bad sizes");
  const double* w = model.out_weights.data.data();
  for (std::size_t k = 0; k < c; ++k)
    out[k] = -(dot(repr.data(), w + k * d, d) + model.out_bias[k]);
}

void energies_from_repr(const ModelParams& model, std::span<const double> repr,
                        std::span<const ClassId> classes, std::span<double> out) {
  const std::size_t d = model.repr_dim();
  if (repr.size() != d || out.size() != classes.size())
    throw ShapeError("energies_from_repr: bad sizes");
  const double* w = model.out_weights.data.data();
  for (std::size_t j = 0; j < classes.size(); ++j) {
    const ClassId k = classes[j];
    check_class(model, k);
    out[j] = -(dot(repr.data(), w + std::size_t{k} * d, d) + model.out_bias[k]);
  }
}

EnergyVec energies_full(const ModelParams& model, std::span<const double> x) {
  const Activations acts = forward(model, x);
  EnergyVec e(model.num_classes());
  energies_from_repr(model, acts.repr, e);
  return e;
}

EnergyVec energies_subset(const ModelParams& model, std::span<const double> x,
                          std::span<const ClassId> classes) {
  for (ClassId k : classes) check_class(model, k);
  const Activations acts = forward(model, x);
  EnergyVec e(classes.size());
  energies_from_repr(model, acts.repr, classes, e);
  return e;
}

ProbVec softmax_T(std::span<const double> energies, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be > 0");
  if (energies.empty()) throw ParameterError("softmax of an empty energy vector");
  const double lowest = *std::min_element(energies.begin(), energies.end());
  ProbVec q(energies.size());
  double z = 0.0;
  for (std::size_t i = 0; i < energies.size(); ++i) {
    q[i] = std::exp(-(energies[i] - lowest) / temperature);
    z += q[i];
  }
  for (double& v : q) v /= z;
  return q;
}

void accumulate_energy_grads(const ModelParams& model, std::span<const double> x,
                             const Activations& acts, std::span<const ClassId> classes,
                             std::span<const double> coeffs, ParamGrad& out) {
  if (classes.size() != coeffs.size()) throw ShapeError("classes/coeffs length mismatch");
  const std::size_t c = model.num_classes();
  const std::size_t d = model.repr_dim();
  for (ClassId k : classes) check_class(model, k);
  if (out.out_weights.size() != d * c || out.out_bias.size() != c)
    throw ShapeError("gradient buffer does not match model");

  // dE_k/db_k = -1, dE_k/dW[k,:] = -repr
  for (std::size_t j = 0; j < classes.size(); ++j) out.out_bias[classes[j]] -= coeffs[j];
  const double* w = model.out_weights.data.data();
  double* gw = out.out_weights.data();
  for (std::size_t j = 0; j < classes.size(); ++j) {
    double* g = gw + std::size_t{classes[j]} * d;
    const double cj = coeffs[j];
    for (std::size_t r = 0; r < d; ++r) g[r] -= cj * acts.repr[r];
  }
  if (model.is_linear()) return;

  // dE_k/drepr = -W[k,:], then back through the activation.
  std::vector<double> d_pre(d, 0.0);
  for (std::size_t j = 0; j < classes.size(); ++j) {
    const double* wk = w + std::size_t{classes[j]} * d;
    const double cj = coeffs[j];
    for (std::size_t r = 0; r < d; ++r) d_pre[r] -= cj * wk[r];
  }
  for (std::size_t r = 0; r < d; ++r) {
    const bool active = model.activation == Activation::identity || acts.pre_activation[r] > 0.0;
    if (!active) d_pre[r] = 0.0;
  }
  for (std::size_t r = 0; r < d; ++r) out.hidden_bias[r] += d_pre[r];
  const std::size_t d_in = x.size();
  for (std::size_t i = 0; i < d_in; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    double* gh = out.hidden_weights.data() + i * d;
    for (std::size_t r = 0; r < d; ++r) gh[r] += xi * d_pre[r];
  }
}

ParamGrad energy_param_grad(const ModelParams& model, std::span<const double> x,
                            ClassId class_id) {
  check_class(model, class_id);
  const Activations acts = forward(model, x);
  ParamGrad g = ParamGrad::zeros_like(model);
  const ClassId cls[1] = {class_id};
  const double one[1] = {1.0};
  accumulate_energy_grads(model, x, acts, cls, one, g);
  return g;
}

ClassId argmin_energy(std::span<const double> energies) {
  if (energies.empty()) throw ParameterError("argmin of an empty energy vector");
  // min_element returns the first minimum, which is the lowest class id.
  return static_cast<ClassId>(std::min_element(energies.begin(), energies.end()) -
                              energies.begin());
}

ClassId predict_top1(const ModelParams& model, std::span<const double> x) {
  return argmin_energy(energies_full(model, x));
}

namespace {
constexpr std::string_view kModelMagic = "SDKD1";
}

DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix t(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
  return t;
}

void save_model(const ModelParams& model, const std::filesystem::path& path) {
  validate(model);
  detail::LeWriter w;
  w.bytes(kModelMagic);
  w.i32(static_cast<std::int32_t>(model.kind()));
  w.i32(static_cast<std::int32_t>(model.input_dim()));
  w.i32(static_cast<std::int32_t>(model.repr_dim()));
  w.i32(static_cast<std::int32_t>(model.num_classes()));
  // out_weights goes to disk as d_repr x C row-major.
  if (model.hidden_weights) {
    w.f64s(model.hidden_weights->data);
    w.f64s(*model.hidden_bias);
  }
  w.f64s(transpose(model.out_weights).data);
  w.f64s(model.out_bias);
  w.write_file(path);
}

ModelParams load_model(const std::filesystem::path& path) {
  auto r = detail::LeReader::from_file(path, "checkpoint");
  r.expect_magic(kModelMagic);
  const std::int32_t kind = r.i32();
  const std::int32_t d_in = r.i32();
  const std::int32_t d_repr = r.i32();
  const std::int32_t n_classes = r.i32();
  if (d_in <= 0 || d_repr <= 0 || n_classes < 2)
    throw FormatError("corrupt checkpoint: bad dimensions");
  ModelParams m;
  switch (static_cast<ModelKind>(kind)) {
    case ModelKind::linear:
      if (d_in != d_repr) throw FormatError("corrupt checkpoint: linear model with d_in != d_repr");
      m = make_linear(static_cast<std::size_t>(d_in), static_cast<std::size_t>(n_classes));
      break;
    case ModelKind::mlp_relu:
    case ModelKind::mlp_identity:
      m = make_mlp(static_cast<std::size_t>(d_in), static_cast<std::size_t>(d_repr),
                   static_cast<std::size_t>(n_classes),
                   kind == static_cast<std::int32_t>(ModelKind::mlp_relu) ? Activation::relu
                                                                          : Activation::identity);
      break;
    default:
      throw FormatError("corrupt checkpoint: unknown model kind " + std::to_string(kind));
  }
  if (m.hidden_weights) {
    r.f64s(m.hidden_weights->data);
    r.f64s(*m.hidden_bias);
  }
  DenseMatrix w_disk(m.repr_dim(), m.num_classes());
  r.f64s(w_disk.data);
  m.out_weights = transpose(w_disk);
  r.f64s(m.out_bias);
  r.expect_end();
  validate(m);
  return m;
}

}  // namespace sdkd
