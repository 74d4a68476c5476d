#include "sdkd/soft_labels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "binary_io.hpp"

namespace sdkd {

SoftLabelStore relabel_dataset(const ModelParams& teacher, const Dataset& data,
                               double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be > 0");
  if (teacher.num_classes() != data.n_classes)
    throw ShapeError("teacher has " + std::to_string(teacher.num_classes()) +
                     " outputs, dataset has " + std::to_string(data.n_classes) + " classes");
  if (teacher.input_dim() != data.dim())
    throw ShapeError("teacher input dimension does not match dataset");
  SoftLabelStore store;
  store.temperature = temperature;
  store.probs = DenseMatrix(data.size(), data.n_classes);
  for (std::size_t s = 0; s < data.size(); ++s) {
    const ProbVec p = softmax_T(energies_full(teacher, data.input(s)), temperature);
    std::copy(p.begin(), p.end(), store.probs.row(s).begin());
  }
  return store;
}

RankMapRow build_rank_map(std::span<const double> p) {
  RankMapRow row;
  row.rank_to_class.resize(p.size());
  std::iota(row.rank_to_class.begin(), row.rank_to_class.end(), ClassId{0});
  std::stable_sort(row.rank_to_class.begin(), row.rank_to_class.end(),
                   [&](ClassId a, ClassId b) { return p[a] > p[b]; });
  row.class_to_rank.resize(p.size());
  for (std::size_t r = 0; r < p.size(); ++r)
    row.class_to_rank[row.rank_to_class[r]] = static_cast<Rank>(r);
  return row;
}

ClassId rank_to_class(const RankMapRow& row, Rank rank) {
  if (rank >= row.rank_to_class.size())
    throw IndexError("rank " + std::to_string(rank) + " out of range");
  return row.rank_to_class[rank];
}

RankMaps::RankMaps(const SoftLabelStore& store)
    : n_samples_(store.n_samples()),
      n_classes_(store.n_classes()),
      rank_to_class_(store.n_samples() * store.n_classes()),
      class_to_rank_(store.n_samples() * store.n_classes()) {
  for (std::size_t s = 0; s < n_samples_; ++s) {
    const RankMapRow row = build_rank_map(store.row(s));
    std::copy(row.rank_to_class.begin(), row.rank_to_class.end(),
              rank_to_class_.begin() + static_cast<std::ptrdiff_t>(s * n_classes_));
    std::copy(row.class_to_rank.begin(), row.class_to_rank.end(),
              class_to_rank_.begin() + static_cast<std::ptrdiff_t>(s * n_classes_));
  }
}

ClassId RankMaps::rank_to_class(std::size_t sample, Rank rank) const {
  if (sample >= n_samples_) throw IndexError("sample " + std::to_string(sample) + " out of range");
  if (rank >= n_classes_) throw IndexError("rank " + std::to_string(rank) + " out of range");
  return rank_to_class_[sample * n_classes_ + rank];
}

Rank RankMaps::class_to_rank(std::size_t sample, ClassId cls) const {
  if (sample >= n_samples_) throw IndexError("sample " + std::to_string(sample) + " out of range");
  if (cls >= n_classes_) throw IndexError("class " + std::to_string(cls) + " out of range");
  return class_to_rank_[sample * n_classes_ + cls];
}

namespace {
constexpr std::string_view kStoreMagic = "SDSL1";
}

void save_store(const SoftLabelStore& store, const std::filesystem::path& path) {
  detail::LeWriter w;
  w.bytes(kStoreMagic);
  w.i32(static_cast<std::int32_t>(store.n_samples()));
  w.i32(static_cast<std::int32_t>(store.n_classes()));
  w.f64(store.temperature);
  w.f64s(store.probs.data);
  w.write_file(path);
}

SoftLabelStore load_store(const std::filesystem::path& path) {
  auto r = detail::LeReader::from_file(path, "store");
  r.expect_magic(kStoreMagic);
  const std::int32_t n = r.i32();
  const std::int32_t c = r.i32();
  if (n < 0 || c < 1) throw FormatError("corrupt store: bad dimensions");
  SoftLabelStore store;
  store.temperature = r.f64();
  store.probs = DenseMatrix(static_cast<std::size_t>(n), static_cast<std::size_t>(c));
  r.f64s(store.probs.data);
  r.expect_end();
  for (std::size_t s = 0; s < store.n_samples(); ++s) {
    const auto row = store.row(s);
    const double sum = std::accumulate(row.begin(), row.end(), 0.0);
    const bool nonneg = std::all_of(row.begin(), row.end(), [](double v) { return v >= 0.0; });
    if (!nonneg || std::abs(sum - 1.0) > 1e-6)
      throw FormatError("corrupt store: row " + std::to_string(s) + " is not a distribution");
  }
  return store;
}

}  // namespace sdkd
