#include "sdkd/timing.hpp"

#include <algorithm>
#include <numeric>

namespace sdkd {

namespace {

double median(std::vector<std::int64_t> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = static_cast<double>(v[mid]);
  if (v.size() % 2 == 1) return hi;
  const double lo = static_cast<double>(
      *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  return 0.5 * (lo + hi);
}

double mean_ms(const std::vector<std::int64_t>& v) {
  if (v.empty()) return 0.0;
  const double total = std::accumulate(v.begin(), v.end(), 0.0,
                                       [](double a, std::int64_t b) { return a + static_cast<double>(b); });
  return total / static_cast<double>(v.size()) * 1e-6;
}

}  // namespace

double TimingRecord::median_last_layer_ns() const { return median(last_layer_ns); }
double TimingRecord::median_sampling_ns() const { return median(sampling_ns); }

double TimingRecord::median_total_ns() const {
  std::vector<std::int64_t> total(last_layer_ns.size());
  for (std::size_t i = 0; i < total.size(); ++i) total[i] = last_layer_ns[i] + sampling_ns[i];
  return median(std::move(total));
}

double TimingRecord::mean_last_layer_ms() const { return mean_ms(last_layer_ns); }
double TimingRecord::mean_sampling_ms() const { return mean_ms(sampling_ns); }

}  // namespace sdkd
