#pragma once

#include <cstdint>

namespace shelfnet::train {

struct LrSchedule {
  double base_lr = 0.01;
  std::int64_t total_iter = 1;
  double power = 0.9;
};

// base_lr * (1 - iter / total_iter)^power for 0 <= iter <= total_iter.
double poly_lr(const LrSchedule& sched, std::int64_t iter);

void validate(const LrSchedule& sched);

}  // namespace shelfnet::train
