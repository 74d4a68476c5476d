#pragma once

#include <chrono>
#include <cstdint>
#include <vector>

namespace sdkd {

// Per-iteration wall times in nanoseconds. last_layer_ns covers the output
// energies and their gradients; sampling_ns covers proposal construction,
// draws and rank-to-class mapping.
struct TimingRecord {
  std::vector<std::int64_t> last_layer_ns;
  std::vector<std::int64_t> sampling_ns;

  std::size_t iterations() const { return last_layer_ns.size(); }
  void add(std::int64_t last_layer, std::int64_t sampling) {
    last_layer_ns.push_back(last_layer);
    sampling_ns.push_back(sampling);
  }
  double median_last_layer_ns() const;
  double median_sampling_ns() const;
  // Median of the per-iteration sum.
  double median_total_ns() const;
  double mean_last_layer_ms() const;
  double mean_sampling_ms() const;

  bool operator==(const TimingRecord&) const = default;
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  std::int64_t elapsed_ns() const {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() -
                                                                start_)
        .count();
  }
  void restart() { start_ = std::chrono::steady_clock::now(); }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace sdkd
