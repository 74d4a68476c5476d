#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sdkd/dense.hpp"

namespace sdkd {

struct Dataset {
  DenseMatrix inputs;  // n x d
  std::vector<ClassId> labels;
  std::size_t n_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.cols; }
  std::span<const double> input(std::size_t i) const { return inputs.row(i); }

  bool operator==(const Dataset&) const = default;
};

// Throws ShapeError when n == 0, labels are out of range, sizes disagree or an
// input is non-finite.
void validate(const Dataset& data);

struct BlobsConfig {
  std::size_t n_classes = 100;
  std::size_t samples_per_class = 100;
  std::size_t dim = 32;
  double center_scale = 3.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
};

struct SplitDataset {
  Dataset train;
  Dataset test;
  DenseMatrix centers;  // n_classes x dim
};

// Centers ~ U[-center_scale, center_scale]^dim, samples = center + N(0, sigma^2 I).
// Each class is split 80/20 into train/test, so both splits are balanced.
SplitDataset gen_blobs(const BlobsConfig& cfg);

// IDX images (magic 0x00000803) and labels (0x00000801); pixels scaled to [0,1].
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

struct CsvDataset {
  Dataset data;
  std::vector<std::string> feature_names;
  // label_names[id] is the original label text of class id.
  std::vector<std::string> label_names;
};

// Numeric CSV with a header row. Labels are re-indexed to 0..K-1 in ascending
// numeric order (lexicographic if any label is non-numeric).
CsvDataset load_csv(const std::filesystem::path& path, const std::string& label_column);

// Writes header f0..f{d-1},label and one row per sample with round-trip
// precision.
void save_csv(const Dataset& data, const std::filesystem::path& path);

}  // namespace sdkd
