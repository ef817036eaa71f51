#include "shelfnet/train/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "shelfnet/errors.hpp"
#include "shelfnet/tensor/random.hpp"
#include "shelfnet/train/inference.hpp"

namespace shelfnet::train {

void validate(const TrainConfig& cfg) {
  validate(cfg.schedule);
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (cfg.ohem.min_kept < 0) throw ConfigError("ohem min_kept must be non-negative");
  if (cfg.eval_every < 0) throw ConfigError("eval_every must be non-negative");
}

BatchSource fixed_source(SampleBatch batch) {
  return [batch = std::move(batch)](std::int64_t) { return batch; };
}

BatchSource synthetic_source(std::uint64_t seed, const SynthConfig& cfg, std::int64_t batch_size,
                             std::optional<AugmentPolicy> policy) {
  validate(cfg);
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (policy) validate(*policy);
  return [=](std::int64_t iter) {
    SampleBatch b = synth_batch(seed, iter * batch_size, batch_size, cfg);
    return policy ? augment(b, mix_seed(seed, static_cast<std::uint64_t>(iter)), *policy) : b;
  };
}

BatchSource dataset_source(SampleBatch data, std::int64_t batch_size, std::uint64_t seed,
                           std::optional<AugmentPolicy> policy) {
  if (data.n < 1) throw InputError("dataset is empty");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (policy) validate(*policy);
  return [data = std::move(data), batch_size, seed, policy](std::int64_t iter) {
    SampleBatch b;
    for (std::int64_t j = 0; j < batch_size; ++j) b.append(data.slice((iter * batch_size + j) % data.n, 1));
    return policy ? augment(b, mix_seed(seed, static_cast<std::uint64_t>(iter)), *policy) : b;
  };
}

nlohmann::json to_json(const TraceRecord& r) {
  nlohmann::json j = {{"step", r.step}, {"lr", r.lr}, {"loss", r.loss}};
  if (r.miou) j["miou"] = *r.miou;
  return j;
}

template <typename T>
std::vector<TraceRecord> train_loop(arch::ExecutableNet<T>& net, SgdOptimizer<T>& opt, const BatchSource& source,
                                    const TrainConfig& cfg, std::int64_t start_iter, std::int64_t stop_iter,
                                    const TrainHooks& hooks) {
  validate(cfg);
  if (start_iter < 0 || stop_iter > cfg.schedule.total_iter || start_iter > stop_iter)
    throw InputError("iteration window [" + std::to_string(start_iter) + ", " + std::to_string(stop_iter) +
                     ") outside the schedule");
  std::vector<TraceRecord> trace;
  for (std::int64_t iter = start_iter; iter < stop_iter; ++iter) {
    const double lr = poly_lr(cfg.schedule, iter);
    const SampleBatch batch = source(iter);
    const Tensor<T> logits = net.forward(batch.image_tensor<T>(), Mode::train);
    const Tensor<T> loss = segmentation_loss(logits, batch.labels, cfg.loss, cfg.ohem);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      char msg[160];
      std::snprintf(msg, sizeof msg, "loss became %g at iteration %lld (lr %.6g); training aborted", value,
                    static_cast<long long>(iter), lr);
      throw DivergenceError(msg);
    }
    net.parameters().zero_grad();
    backward(loss);
    opt.step(SgdConfig{lr, cfg.momentum, cfg.weight_decay});

    TraceRecord rec{iter + 1, lr, value, std::nullopt};
    const bool last = iter + 1 == stop_iter;
    if (hooks.validate && cfg.eval_every > 0 && ((iter + 1) % cfg.eval_every == 0 || last)) rec.miou = hooks.validate();
    if (hooks.trace) *hooks.trace << to_json(rec).dump() << "\n" << std::flush;
    trace.push_back(rec);
    if (hooks.on_step) hooks.on_step(iter + 1);
  }
  return trace;
}

template <typename T>
ConfusionMatrix evaluate(arch::ExecutableNet<T>& net, const SampleBatch& data, int num_classes,
                         const std::vector<double>& scales, bool flip, std::int64_t batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  data.validate(num_classes);
  ConfusionMatrix cm(num_classes);
  for (std::int64_t first = 0; first < data.n; first += batch_size) {
    const SampleBatch b = data.slice(first, std::min(batch_size, data.n - first));
    const Tensor<T> prob = multi_scale_predict(net, b.image_tensor<T>(), scales, flip);
    cm.update(argmax_channels(prob), b.labels);
  }
  return cm;
}

template std::vector<TraceRecord> train_loop(arch::ExecutableNet<float>&, SgdOptimizer<float>&, const BatchSource&,
                                             const TrainConfig&, std::int64_t, std::int64_t, const TrainHooks&);
template std::vector<TraceRecord> train_loop(arch::ExecutableNet<double>&, SgdOptimizer<double>&, const BatchSource&,
                                             const TrainConfig&, std::int64_t, std::int64_t, const TrainHooks&);
template ConfusionMatrix evaluate(arch::ExecutableNet<float>&, const SampleBatch&, int, const std::vector<double>&,
                                  bool, std::int64_t);
template ConfusionMatrix evaluate(arch::ExecutableNet<double>&, const SampleBatch&, int, const std::vector<double>&,
                                  bool, std::int64_t);

}  // namespace shelfnet::train
