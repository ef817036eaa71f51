#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "shelfnet/arch/network.hpp"
#include "shelfnet/tensor/optim.hpp"
#include "shelfnet/train/augment.hpp"
#include "shelfnet/train/data.hpp"
#include "shelfnet/train/losses.hpp"
#include "shelfnet/train/metrics.hpp"
#include "shelfnet/train/schedule.hpp"

namespace shelfnet::train {

struct TrainConfig {
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  LossKind loss = LossKind::cross_entropy;
  OhemConfig ohem;
  std::int64_t eval_every = 0;  // 0: no periodic validation
};

void validate(const TrainConfig& cfg);

// Batch for a given iteration. Must be a pure function of the iteration so
// that runs (and resumed runs) are reproducible.
using BatchSource = std::function<SampleBatch(std::int64_t iter)>;

// The same batch every iteration.
BatchSource fixed_source(SampleBatch batch);
// Synthetic stream: iteration i uses samples [i*b, (i+1)*b), augmented
// with seed mix_seed(seed, i) when a policy is given.
BatchSource synthetic_source(std::uint64_t seed, const SynthConfig& cfg, std::int64_t batch_size,
                             std::optional<AugmentPolicy> policy = std::nullopt);
// Cycles through a loaded dataset in order.
BatchSource dataset_source(SampleBatch data, std::int64_t batch_size, std::uint64_t seed,
                           std::optional<AugmentPolicy> policy = std::nullopt);

// Held-out synthetic samples start here so they never overlap training indices.
inline constexpr std::int64_t kHeldOutFirst = std::int64_t{1} << 40;

struct TraceRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> miou;
};

nlohmann::json to_json(const TraceRecord& r);

struct TrainHooks {
  std::function<double()> validate;                 // returns mIoU; called every eval_every steps
  std::ostream* trace = nullptr;                    // JSONL sink
  std::function<void(std::int64_t next_iter)> on_step;  // after each optimizer step
};

// Runs iterations [start_iter, stop_iter) of the poly schedule with
// momentum SGD. A non-finite loss raises DivergenceError before any update
// is applied for that step.
template <typename T>
std::vector<TraceRecord> train_loop(arch::ExecutableNet<T>& net, SgdOptimizer<T>& opt, const BatchSource& source,
                                    const TrainConfig& cfg, std::int64_t start_iter, std::int64_t stop_iter,
                                    const TrainHooks& hooks = {});

// Evaluates in minibatches of `batch_size` with multi_scale_predict.
template <typename T>
ConfusionMatrix evaluate(arch::ExecutableNet<T>& net, const SampleBatch& data, int num_classes,
                         const std::vector<double>& scales = {1.0}, bool flip = false, std::int64_t batch_size = 8);

}  // namespace shelfnet::train
