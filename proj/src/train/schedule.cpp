#include "shelfnet/train/schedule.hpp"

#include <cmath>
#include <string>

#include "shelfnet/errors.hpp"

namespace shelfnet::train {

void validate(const LrSchedule& s) {
  if (!(s.base_lr >= 0.0)) throw ConfigError("base_lr must be non-negative");
  if (s.total_iter < 1) throw ConfigError("total_iter must be positive");
  if (!(s.power > 0.0)) throw ConfigError("power must be positive");
}

double poly_lr(const LrSchedule& s, std::int64_t iter) {
  validate(s);
  if (iter < 0 || iter > s.total_iter)
    throw InputError("iteration " + std::to_string(iter) + " outside [0, " + std::to_string(s.total_iter) + "]");
  if (iter == s.total_iter) return 0.0;
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(s.total_iter);
  return s.base_lr * std::pow(frac, s.power);
}

}  // namespace shelfnet::train
