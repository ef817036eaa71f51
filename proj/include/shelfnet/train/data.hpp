#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shelfnet/tensor/tensor.hpp"

namespace shelfnet::train {

// Images (n, 3, h, w) with values in [0, 1] and label maps (n, h, w).
struct SampleBatch {
  std::int64_t n = 0, h = 0, w = 0;
  std::vector<float> images;
  std::vector<std::int32_t> labels;
  std::vector<std::string> provenance;  // one entry per sample

  template <typename T>
  Tensor<T> image_tensor() const;

  SampleBatch slice(std::int64_t first, std::int64_t count) const;
  void append(const SampleBatch& other);
  // Throws InputError when buffer sizes disagree with (n, h, w) or a label
  // is neither in [0, num_classes) nor the ignore index.
  void validate(int num_classes) const;
};

// Shapes on a textured background. Class 0 is background; classes 1..3 are
// rectangle, disk and triangle (the first num_classes - 1 are used).
struct SynthConfig {
  std::int64_t height = 64;
  std::int64_t width = 64;
  int num_classes = 4;
  double background_prior = 0.4;  // the rest is split evenly over shapes
  bool noise = true;              // false: flat class colors, plain background
};

void validate(const SynthConfig& cfg);
std::vector<double> class_priors(const SynthConfig& cfg);

// Reference color of each class in the noise-free mode.
std::vector<std::array<float, 3>> class_colors(const SynthConfig& cfg);

// Sample `index` of the stream `seed`; independent of every other index.
SampleBatch synth_sample(std::uint64_t seed, std::int64_t index, const SynthConfig& cfg);
// Samples [first, first + count) of the stream.
SampleBatch synth_batch(std::uint64_t seed, std::int64_t first, std::int64_t count, const SynthConfig& cfg);

// Binary PPM (P6) / PGM (P5), 8-bit.
void write_ppm(const std::filesystem::path& path, std::int64_t h, std::int64_t w, const std::vector<std::uint8_t>& rgb);
std::vector<std::uint8_t> read_ppm(const std::filesystem::path& path, std::int64_t& h, std::int64_t& w);
void write_pgm(const std::filesystem::path& path, std::int64_t h, std::int64_t w, const std::vector<std::uint8_t>& gray);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::int64_t& h, std::int64_t& w);

// Writes NNNN.ppm / NNNN.pgm pairs starting at 0000. Labels must fit in a byte.
void write_dataset(const std::filesystem::path& dir, const SampleBatch& batch);
// Reads every NNNN.ppm with its NNNN.pgm partner, in name order.
SampleBatch load_dataset(const std::filesystem::path& dir);

}  // namespace shelfnet::train
