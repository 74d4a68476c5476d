#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "sdkd/data.hpp"
#include "sdkd/energy_model.hpp"

namespace sdkd {

// Teacher probability rows, one per sample.
struct SoftLabelStore {
  double temperature = 1.0;
  DenseMatrix probs;  // n_samples x n_classes

  std::size_t n_samples() const { return probs.rows; }
  std::size_t n_classes() const { return probs.cols; }
  std::span<const double> row(std::size_t s) const { return probs.row(s); }

  bool operator==(const SoftLabelStore&) const = default;
};

// Row s = softmax_T(energies_full(teacher, inputs[s]), T).
SoftLabelStore relabel_dataset(const ModelParams& teacher, const Dataset& data, double temperature);

// Per-sample bijection between ranks and classes. Rank 0 is the class with the
// highest teacher probability; ties go to the lower class id.
struct RankMapRow {
  std::vector<ClassId> rank_to_class;
  std::vector<Rank> class_to_rank;
};

RankMapRow build_rank_map(std::span<const double> p);

// Rank maps for every row of a store, stored flat (n_samples x C).
class RankMaps {
 public:
  RankMaps() = default;
  explicit RankMaps(const SoftLabelStore& store);

  std::size_t n_samples() const { return n_samples_; }
  std::size_t n_classes() const { return n_classes_; }

  // Throws IndexError when sample or rank is out of range.
  ClassId rank_to_class(std::size_t sample, Rank rank) const;
  Rank class_to_rank(std::size_t sample, ClassId cls) const;

  std::span<const ClassId> rank_to_class_row(std::size_t sample) const {
    return {rank_to_class_.data() + sample * n_classes_, n_classes_};
  }
  std::span<const Rank> class_to_rank_row(std::size_t sample) const {
    return {class_to_rank_.data() + sample * n_classes_, n_classes_};
  }

 private:
  std::size_t n_samples_ = 0;
  std::size_t n_classes_ = 0;
  std::vector<ClassId> rank_to_class_;
  std::vector<Rank> class_to_rank_;
};

ClassId rank_to_class(const RankMapRow& row, Rank rank);

// "SDSL1" file: magic, LE int32 n_samples, n_classes, LE float64 temperature,
// then the rows as LE float64. Header is 21 bytes.
inline constexpr std::size_t kSoftLabelHeaderBytes = 5 + 4 + 4 + 8;

void save_store(const SoftLabelStore& store, const std::filesystem::path& path);
SoftLabelStore load_store(const std::filesystem::path& path);

}  // namespace sdkd
