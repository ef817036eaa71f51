#include "shelfnet/train/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "shelfnet/analysis/cost.hpp"
#include "shelfnet/errors.hpp"
#include "shelfnet/tensor/random.hpp"

namespace shelfnet::train {

BenchStats summarize_timings(const std::vector<double>& seconds, std::int64_t macs) {
  if (seconds.empty()) throw ConfigError("repetitions must be at least 1");
  BenchStats s;
  s.repetitions = static_cast<int>(seconds.size());
  double sum = 0;
  for (double t : seconds) sum += t;
  s.mean = sum / static_cast<double>(seconds.size());
  double var = 0;
  for (double t : seconds) var += (t - s.mean) * (t - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(seconds.size()));
  auto sorted = seconds;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  s.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  s.min = sorted.front();
  s.max = sorted.back();
  // The mean of identical values can differ from them in the last bit.
  s.mean = std::clamp(s.mean, s.min, s.max);
  s.macs = macs;
  s.macs_per_second = s.mean > 0 ? static_cast<double>(macs) / s.mean : 0.0;
  return s;
}

template <typename T>
BenchStats bench_forward(arch::ExecutableNet<T>& net, std::int64_t h, std::int64_t w, int repetitions) {
  if (repetitions < 1) throw ConfigError("repetitions must be at least 1");
  const std::int64_t macs = analysis::count_flops(net.graph(), h, w).total_macs;
  std::mt19937_64 rng(mix_seed(net.seed(), 0xBE4C));
  std::vector<T> pixels(static_cast<std::size_t>(3 * h * w));
  for (auto& v : pixels) v = static_cast<T>(uniform01(rng));
  const Tensor<T> image(Shape{1, 3, h, w}, std::move(pixels));

  net.forward(image, Mode::eval);  // warm-up
  std::vector<double> seconds;
  seconds.reserve(static_cast<std::size_t>(repetitions));
  for (int r = 0; r < repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    net.forward(image, Mode::eval);
    seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return summarize_timings(seconds, macs);
}

nlohmann::json to_json(const BenchStats& s) {
  return {{"repetitions", s.repetitions}, {"mean_s", s.mean},     {"median_s", s.median},
          {"stddev_s", s.stddev},         {"min_s", s.min},       {"max_s", s.max},
          {"macs", s.macs},               {"macs_per_s", s.macs_per_second}};
}

template BenchStats bench_forward(arch::ExecutableNet<float>&, std::int64_t, std::int64_t, int);
template BenchStats bench_forward(arch::ExecutableNet<double>&, std::int64_t, std::int64_t, int);

}  // namespace shelfnet::train
