#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "shelfnet/arch/network.hpp"

namespace shelfnet::train {

inline constexpr int kDefaultRepetitions = 100;

// Wall-clock statistics in seconds; stddev is the population value.
struct BenchStats {
  int repetitions = 0;
  double mean = 0, median = 0, stddev = 0, min = 0, max = 0;
  std::int64_t macs = 0;       // per forward, from the cost model
  double macs_per_second = 0;  // macs / mean
};

BenchStats summarize_timings(const std::vector<double>& seconds, std::int64_t macs);

// One warm-up forward, then `repetitions` timed eval forwards of a single
// (1, 3, h, w) image.
template <typename T>
BenchStats bench_forward(arch::ExecutableNet<T>& net, std::int64_t h, std::int64_t w,
                         int repetitions = kDefaultRepetitions);

nlohmann::json to_json(const BenchStats& s);

}  // namespace shelfnet::train
