#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sdkd/errors.hpp"

namespace sdkd {

using ClassId = std::uint32_t;
using Rank = std::uint32_t;

// Row-major matrix of doubles.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool operator==(const DenseMatrix&) const = default;
};

// Throws ShapeError unless data.size() == rows * cols and every entry is finite.
void validate(const DenseMatrix& m);

bool all_finite(std::span<const double> values);

DenseMatrix transpose(const DenseMatrix& m);

}  // namespace sdkd
