#include "doctest.h"
#include "oracles.hpp"
#include "sdkd/energy_model.hpp"
#include "sdkd/errors.hpp"

#include <filesystem>
#include <fstream>

using namespace sdkd;

namespace {

ModelParams seeded_mlp(std::uint64_t seed, std::size_t d, std::size_t h, std::size_t c) {
  Rng rng(seed);
  ModelParams m = make_mlp(d, h, c, Activation::relu);
  init_uniform(m, rng, 1.0);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& b : *m.hidden_bias) b = u(rng);
  for (double& b : m.out_bias) b = u(rng);
  return m;
}

ModelParams seeded_linear(std::uint64_t seed, std::size_t d, std::size_t c) {
  Rng rng(seed);
  ModelParams m = make_linear(d, c);
  init_uniform(m, rng, 1.0);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& b : m.out_bias) b = u(rng);
  return m;
}

}  // namespace

TEST_CASE("forward_representation: linear model is the identity") {
  const ModelParams m = make_linear(2, 3);
  const std::vector<double> x = {1, 2};
  CHECK(forward_representation(m, x) == x);
}

TEST_CASE("forward_representation: relu clamps negatives") {
  ModelParams m = make_mlp(2, 2, 2, Activation::relu);
  (*m.hidden_weights)(0, 0) = 1;
  (*m.hidden_weights)(1, 1) = 1;
  const std::vector<double> x = {-1, 2};
  CHECK(forward_representation(m, x) == std::vector<double>{0, 2});
}

TEST_CASE("forward_representation: matches scalar-loop oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelParams m = seeded_mlp(seed, 5, 7, 4);
    std::mt19937_64 rng(seed + 100);
    const auto x = oracle::random_vec(5, rng);
    const auto got = forward_representation(m, x);
    const auto want = oracle::representation(m, x);
    CHECK(oracle::linf(got, want) <= 1e-14);
  }
}

TEST_CASE("forward_representation: dimension mismatch") {
  const ModelParams m = make_linear(3, 2);
  const std::vector<double> x = {1, 2};
  CHECK_THROWS_AS(forward_representation(m, x), ShapeError);
}

TEST_CASE("energies_full: zero map") {
  const ModelParams m = make_linear(3, 4);
  const std::vector<double> x = {1, -2, 3};
  CHECK(energies_full(m, x) == EnergyVec(4, 0.0));
}

TEST_CASE("energies_full: hand example") {
  // W = [[1,2],[3,4]] in d_repr x C; class k uses column k.
  ModelParams m = make_linear(2, 2);
  m.out_weights(0, 0) = 1;
  m.out_weights(1, 0) = 2;
  m.out_weights(0, 1) = 3;
  m.out_weights(1, 1) = 4;
  CHECK(oracle::w_out(m, 0, 1) == 2);
  const std::vector<double> x = {1, 0};
  CHECK(energies_full(m, x) == EnergyVec{-1, -2});
}

TEST_CASE("energies_full: matches oracle and subset path") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelParams m = seed % 2 ? seeded_mlp(seed, 4, 6, 9) : seeded_linear(seed, 4, 9);
    std::mt19937_64 rng(seed);
    const auto x = oracle::random_vec(4, rng, 2.0);
    const auto full = energies_full(m, x);
    CHECK(oracle::linf(full, oracle::energies(m, x)) <= 1e-13);
    std::vector<ClassId> all(9);
    for (ClassId i = 0; i < 9; ++i) all[i] = i;
    CHECK(energies_subset(m, x, all) == full);  // bitwise
  }
}

TEST_CASE("energies_subset: duplicates and range") {
  const ModelParams m = seeded_mlp(3, 3, 4, 5);
  const std::vector<double> x = {0.5, -0.1, 2};
  const auto full = energies_full(m, x);
  const std::vector<ClassId> dup = {2, 2};
  const auto e = energies_subset(m, x, dup);
  CHECK(e[0] == full[2]);
  CHECK(e[1] == full[2]);
  const std::vector<ClassId> bad = {5};
  CHECK_THROWS_AS(energies_subset(m, x, bad), IndexError);
}

TEST_CASE("softmax_T examples") {
  auto q = softmax_T(EnergyVec{-1, -1, -1}, 1.0);
  for (double v : q) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  q = softmax_T(EnergyVec{0, -std::log(2.0)}, 1.0);
  CHECK(q[0] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(2.0 / 3).epsilon(1e-14));
  q = softmax_T(EnergyVec{0, -10}, 1e9);
  CHECK(std::abs(q[0] - 0.5) <= 1e-8);
  CHECK(std::abs(q[1] - 0.5) <= 1e-8);
  CHECK_THROWS_AS(softmax_T(EnergyVec{1, 2}, 0.0), ParameterError);
  CHECK_THROWS_AS(softmax_T(EnergyVec{1, 2}, -1.0), ParameterError);
  CHECK_THROWS_AS(softmax_T(EnergyVec{}, 1.0), ParameterError);
}

TEST_CASE("softmax_T properties: normalization, shift invariance, oracle") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> scale(0.1, 500);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + trial % 40;
    const auto e = oracle::random_vec(c, rng, scale(rng));
    const double t = 0.05 + trial * 0.1;
    const auto q = softmax_T(e, t);
    double s = 0;
    for (double v : q) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1) <= 1e-9);
    CHECK(oracle::linf(q, oracle::softmax(e, t)) <= 1e-12);
    auto shifted = e;
    for (double& v : shifted) v += 123.25;
    CHECK(oracle::linf(softmax_T(shifted, t), q) <= 1e-12);
  }
}

TEST_CASE("energy_param_grad: linear closed form") {
  const ModelParams m = seeded_linear(1, 3, 4);
  const std::vector<double> x = {0.3, -1.5, 2.0};
  const ParamGrad g = energy_param_grad(m, x, 2);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < 4; ++k)
      CHECK(g.out_weights[k * 3 + r] == (k == 2 ? -x[r] : 0.0));
  for (std::size_t k = 0; k < 4; ++k) CHECK(g.out_bias[k] == (k == 2 ? -1.0 : 0.0));
  CHECK_THROWS_AS(energy_param_grad(m, x, 4), IndexError);
}

TEST_CASE("energy_param_grad: finite differences on seeded models") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const bool mlp = seed % 2 == 1;
    const ModelParams m = mlp ? seeded_mlp(seed, 4, 5, 6) : seeded_linear(seed, 4, 6);
    std::mt19937_64 rng(seed + 50);
    const auto x = oracle::random_vec(4, rng);
    for (ClassId i = 0; i < 6; ++i) {
      const auto fd = oracle::finite_diff(
          m, [&](const ModelParams& mm) { return oracle::energies(mm, x)[i]; });
      const auto g = energy_param_grad(m, x, i).flatten();
      CHECK(oracle::rel_err(g, fd) <= 1e-6);
    }
  }
}

TEST_CASE("predict_top1 examples and temperature invariance") {
  CHECK(argmin_energy(EnergyVec{0, -3, -1}) == 1);
  CHECK(argmin_energy(EnergyVec{2, 2, 2}) == 0);
  CHECK(predict_top1(make_linear(2, 5), std::vector<double>{1, 1}) == 0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ModelParams m = seeded_mlp(seed, 3, 4, 7);
    std::mt19937_64 rng(seed);
    const auto x = oracle::random_vec(3, rng);
    const ClassId top = predict_top1(m, x);
    for (double t : {1.0, 5.0, 20.0}) {
      const auto q = softmax_T(energies_full(m, x), t);
      CHECK(static_cast<ClassId>(std::max_element(q.begin(), q.end()) - q.begin()) == top);
    }
  }
}

TEST_CASE("validate rejects bad models") {
  ModelParams m = make_linear(2, 3);
  m.out_bias.pop_back();
  CHECK_THROWS_AS(validate(m), ShapeError);
  CHECK_THROWS_AS(make_linear(2, 1), ShapeError);
  ModelParams lin = make_linear(2, 3);
  lin.activation = Activation::relu;
  CHECK_THROWS_AS(validate(lin), ShapeError);
  ModelParams nan = make_linear(2, 3);
  nan.out_weights(0, 0) = std::nan("");
  CHECK_THROWS_AS(validate(nan), ShapeError);
}

TEST_CASE("init_uniform respects the fan-in scale") {
  Rng rng(0);
  ModelParams m = make_mlp(16, 4, 3);
  init_uniform(m, rng);
  for (double v : m.hidden_weights->data) CHECK(std::abs(v) <= 0.25);
  for (double v : m.out_weights.data) CHECK(std::abs(v) <= 0.5);
  for (double v : m.out_bias) CHECK(v == 0.0);
}

TEST_CASE("checkpoint round trip and layout") {
  const auto dir = oracle::scratch("ckpt");
  for (int kind = 0; kind < 2; ++kind) {
    const ModelParams m = kind ? seeded_mlp(4, 3, 5, 4) : seeded_linear(4, 3, 4);
    const auto path = dir / ("m" + std::to_string(kind) + ".sdkd");
    save_model(m, path);
    CHECK(load_model(path) == m);
    std::size_t n_params = 0;
    for (auto a : m.arrays()) n_params += a.size();
    CHECK(std::filesystem::file_size(path) == 5 + 16 + 8 * n_params);
  }
  // out_weights is stored d_repr x C on disk
  ModelParams m = make_linear(2, 3);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t k = 0; k < 3; ++k) m.out_weights(k, r) = 10.0 * r + k;
  save_model(m, dir / "layout.sdkd");
  std::ifstream in(dir / "layout.sdkd", std::ios::binary);
  in.seekg(5 + 16);
  std::vector<double> disk(6);
  in.read(reinterpret_cast<char*>(disk.data()), 48);
  CHECK(disk == std::vector<double>{0, 1, 2, 10, 11, 12});
}

TEST_CASE("checkpoint corruption") {
  const auto dir = oracle::scratch("ckpt_bad");
  const ModelParams m = seeded_linear(1, 3, 4);
  save_model(m, dir / "ok.sdkd");
  const auto size = std::filesystem::file_size(dir / "ok.sdkd");
  std::filesystem::copy_file(dir / "ok.sdkd", dir / "short.sdkd");
  std::filesystem::resize_file(dir / "short.sdkd", size - 3);
  CHECK_THROWS_AS(load_model(dir / "short.sdkd"), FormatError);
  {
    std::ofstream out(dir / "magic.sdkd", std::ios::binary);
    out << "XXXXX";
  }
  CHECK_THROWS_AS(load_model(dir / "magic.sdkd"), FormatError);
  CHECK_THROWS_AS(load_model(dir / "missing.sdkd"), IoError);
}
