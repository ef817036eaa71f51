#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "shelfnet/arch/builders.hpp"
#include "shelfnet/arch/graph.hpp"
#include "shelfnet/train/trainer.hpp"

namespace shelfnet::cli {

// Everything a run depends on. Layout of the JSON file:
//   { "model": {variant, backbone, dilated, widths[4], num_classes,
//               shared_weights, dropout},
//     "input": {height, width},
//     "train": {base_lr, total_iter, power, momentum, weight_decay, loss,
//               ohem_threshold, ohem_min_kept, batch_size, eval_every,
//               checkpoint_every, augment},
//     "data":  {source: "synthetic" | "directory", directory, val_directory,
//               val_count},
//     "eval":  {scales, flip},
//     "bench": {repetitions},
//     "seed": u64, "out": dir }
// Every key is optional; unknown keys are errors.
struct ExperimentConfig {
  arch::ShelfSpec shelf = arch::mini_shelf_spec();
  std::string backbone = "mini";
  bool dilated = false;
  std::int64_t input_h = 64;
  std::int64_t input_w = 64;

  train::TrainConfig train = default_train();
  std::int64_t batch_size = 8;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  bool augment = false;

  std::string data_source = "synthetic";
  std::string data_dir;
  std::string val_dir;
  std::int64_t val_count = 64;

  std::vector<double> eval_scales{1.0};
  bool eval_flip = false;
  int bench_repetitions = 100;

  std::uint64_t seed = 0;
  std::string out = "run";

  static train::TrainConfig default_train();
};

// Switches the backbone preset and resets shelf widths and class count to
// that backbone's defaults.
void set_backbone(ExperimentConfig& cfg, const std::string& name);

// ConfigError messages name the offending field and, when it can be found
// in `text`, its line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Rebuilds the shelf spec from the model fields and checks every
// constraint (shelf geometry, schedule, policy ranges).
void validate(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);

// "512x512" -> (512, 512).
std::pair<std::int64_t, std::int64_t> parse_size(const std::string& s);
std::vector<double> parse_scales(const std::string& s);

}  // namespace shelfnet::cli
