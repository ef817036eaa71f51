#include "shelfnet/train/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>

#include "shelfnet/errors.hpp"
#include "shelfnet/tensor/ops.hpp"
#include "shelfnet/tensor/random.hpp"

namespace shelfnet::train {

namespace fs = std::filesystem;

template <typename T>
Tensor<T> SampleBatch::image_tensor() const {
  return Tensor<T>(Shape{n, 3, h, w}, std::vector<T>(images.begin(), images.end()));
}

template Tensor<float> SampleBatch::image_tensor<float>() const;
template Tensor<double> SampleBatch::image_tensor<double>() const;

SampleBatch SampleBatch::slice(std::int64_t first, std::int64_t count) const {
  if (first < 0 || count < 0 || first + count > n) throw InputError("batch slice out of range");
  SampleBatch out;
  out.n = count;
  out.h = h;
  out.w = w;
  const auto img = static_cast<std::size_t>(3 * h * w), lab = static_cast<std::size_t>(h * w);
  const auto f = static_cast<std::size_t>(first), c = static_cast<std::size_t>(count);
  out.images.assign(images.begin() + f * img, images.begin() + (f + c) * img);
  out.labels.assign(labels.begin() + f * lab, labels.begin() + (f + c) * lab);
  if (provenance.size() == static_cast<std::size_t>(n))
    out.provenance.assign(provenance.begin() + f, provenance.begin() + f + c);
  return out;
}

void SampleBatch::append(const SampleBatch& other) {
  if (n == 0) {
    *this = other;
    return;
  }
  if (other.h != h || other.w != w) throw InputError("cannot append samples of a different size");
  n += other.n;
  images.insert(images.end(), other.images.begin(), other.images.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  provenance.insert(provenance.end(), other.provenance.begin(), other.provenance.end());
}

void SampleBatch::validate(int num_classes) const {
  if (images.size() != static_cast<std::size_t>(n * 3 * h * w) || labels.size() != static_cast<std::size_t>(n * h * w))
    throw InputError("sample buffers disagree with the batch shape");
  for (auto l : labels)
    if (l != kIgnoreIndex && (l < 0 || l >= num_classes))
      throw InputError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
}

void validate(const SynthConfig& cfg) {
  if (cfg.num_classes < 2 || cfg.num_classes > 4) throw ConfigError("synthetic data supports 2 to 4 classes");
  if (cfg.height < 16 || cfg.width < 16) throw InputError("synthetic images must be at least 16x16");
  if (!(cfg.background_prior > 0.0 && cfg.background_prior < 1.0))
    throw ConfigError("background prior must lie in (0, 1)");
}

std::vector<double> class_priors(const SynthConfig& cfg) {
  validate(cfg);
  std::vector<double> p(static_cast<std::size_t>(cfg.num_classes), (1.0 - cfg.background_prior) / (cfg.num_classes - 1));
  p[0] = cfg.background_prior;
  return p;
}

std::vector<std::array<float, 3>> class_colors(const SynthConfig& cfg) {
  static const std::array<float, 3> table[4] = {
      {0.5f, 0.5f, 0.5f}, {0.85f, 0.25f, 0.2f}, {0.25f, 0.75f, 0.3f}, {0.25f, 0.35f, 0.85f}};
  return {table, table + cfg.num_classes};
}

namespace {

struct Pt {
  double x, y;
};

double cross(Pt a, Pt b, Pt p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); }

bool in_triangle(const Pt v[3], Pt p) {
  const double d1 = cross(v[0], v[1], p), d2 = cross(v[1], v[2], p), d3 = cross(v[2], v[0], p);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0, pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

SampleBatch synth_sample(std::uint64_t seed, std::int64_t index, const SynthConfig& cfg) {
  validate(cfg);
  const std::int64_t H = cfg.height, W = cfg.width, hw = H * W;
  const int K = cfg.num_classes;
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
  const auto colors = class_colors(cfg);

  SampleBatch s;
  s.n = 1;
  s.h = H;
  s.w = W;
  s.images.assign(static_cast<std::size_t>(3 * hw), 0.0f);
  s.labels.assign(static_cast<std::size_t>(hw), 0);
  s.provenance = {"synthetic:" + std::to_string(seed) + ":" + std::to_string(index)};

  // Background: tinted grey with a low-frequency plaid texture.
  const double tint[3] = {uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08)};
  const double fx = uniform(rng, 0.15, 0.6), fy = uniform(rng, 0.15, 0.6), phase = uniform(rng, 0, 6.283);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = colors[0][static_cast<std::size_t>(c)];
        if (cfg.noise)
          v += tint[c] + 0.1 * std::sin(fx * x + phase) * std::cos(fy * y + 0.5 * c) + 0.04 * standard_normal(rng);
        s.images[static_cast<std::size_t>((c * H + y) * W + x)] = clamp01(v);
      }

  // Paint shapes until the background share drops to its prior, steering
  // the class choice toward whichever shape class is furthest below target.
  std::vector<std::int64_t> count(static_cast<std::size_t>(K), 0);
  count[0] = hw;
  const double shape_target = (1.0 - cfg.background_prior) / (K - 1) * static_cast<double>(hw);
  for (int shape = 0; shape < 64; ++shape) {
    const double remaining = static_cast<double>(count[0]) - cfg.background_prior * static_cast<double>(hw);
    if (remaining <= 0.0) break;
    std::vector<double> deficit(static_cast<std::size_t>(K - 1));
    double total = 0.0;
    for (int k = 1; k < K; ++k) total += deficit[static_cast<std::size_t>(k - 1)] =
        std::max(0.0, shape_target - static_cast<double>(count[static_cast<std::size_t>(k)])) + 1.0;
    double pick = uniform(rng, 0.0, total);
    int cls = 1;
    for (; cls < K - 1; ++cls) {
      pick -= deficit[static_cast<std::size_t>(cls - 1)];
      if (pick < 0) break;
    }

    double area = uniform(rng, 0.05, 0.16) * static_cast<double>(hw);
    area = std::min(area, std::max(1.2 * remaining, 0.04 * static_cast<double>(hw)));
    const double cx = uniform(rng, 0.12, 0.88) * W, cy = uniform(rng, 0.12, 0.88) * H;

    std::array<double, 3> color;
    for (int c = 0; c < 3; ++c)
      color[static_cast<std::size_t>(c)] =
          colors[static_cast<std::size_t>(cls)][static_cast<std::size_t>(c)] + (cfg.noise ? uniform(rng, -0.12, 0.12) : 0.0);

    // Shape parameters.
    double hw_x = 0, hw_y = 0, radius = 0;
    Pt tri[3];
    if (cls == 1) {
      const double aspect = uniform(rng, 0.6, 1.6);
      hw_x = 0.5 * std::sqrt(area * aspect);
      hw_y = 0.5 * area / (2.0 * hw_x);
    } else if (cls == 2) {
      radius = std::sqrt(area / 3.141592653589793);
    } else {
      const double R = std::sqrt(4.0 * area / (3.0 * std::sqrt(3.0)));
      const double rot = uniform(rng, 0.0, 6.283185307179586);
      for (int i = 0; i < 3; ++i) {
        const double a = rot + i * 2.0943951023931953 + uniform(rng, -0.2, 0.2);
        const double r = R * uniform(rng, 0.9, 1.1);
        tri[i] = {cx + r * std::cos(a), cy + r * std::sin(a)};
      }
    }

    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const Pt p{x + 0.5, y + 0.5};
        bool inside;
        if (cls == 1)
          inside = std::abs(p.x - cx) <= hw_x && std::abs(p.y - cy) <= hw_y;
        else if (cls == 2)
          inside = (p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy) <= radius * radius;
        else
          inside = in_triangle(tri, p);
        if (!inside) continue;
        const auto i = static_cast<std::size_t>(y * W + x);
        --count[static_cast<std::size_t>(s.labels[i])];
        ++count[static_cast<std::size_t>(cls)];
        s.labels[i] = cls;
        for (int c = 0; c < 3; ++c) {
          double v = color[static_cast<std::size_t>(c)];
          if (cfg.noise) v += 0.04 * standard_normal(rng);
          s.images[static_cast<std::size_t>((c * H + y) * W + x)] = clamp01(v);
        }
      }
  }
  return s;
}

SampleBatch synth_batch(std::uint64_t seed, std::int64_t first, std::int64_t count, const SynthConfig& cfg) {
  SampleBatch out;
  for (std::int64_t i = 0; i < count; ++i) out.append(synth_sample(seed, first + i, cfg));
  return out;
}

namespace {

void write_pnm(const fs::path& path, const char* magic, std::int64_t h, std::int64_t w,
               const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  f << magic << "\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InputError("failed writing " + path.string());
}

std::int64_t header_int(std::istream& f, const fs::path& path) {
  int c = f.peek();
  while (c != EOF) {
    if (c == '#') {
      std::string skip;
      std::getline(f, skip);
    } else if (std::isspace(c)) {
      f.get();
    } else {
      break;
    }
    c = f.peek();
  }
  std::int64_t v = -1;
  if (!(f >> v) || v <= 0) throw InputError("malformed header in " + path.string());
  return v;
}

std::vector<std::uint8_t> read_pnm(const fs::path& path, const char* magic, int channels, std::int64_t& h,
                                   std::int64_t& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("cannot open " + path.string());
  std::string m;
  f >> m;
  if (m != magic) throw InputError(path.string() + " is not a binary " + magic + " file");
  w = header_int(f, path);
  h = header_int(f, path);
  const auto maxval = header_int(f, path);
  if (maxval != 255) throw InputError(path.string() + ": only 8-bit files are supported");
  f.get();  // the single whitespace after maxval
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(h * w * channels));
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) throw InputError(path.string() + " is truncated");
  return bytes;
}

}  // namespace

void write_ppm(const fs::path& path, std::int64_t h, std::int64_t w, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(3 * h * w)) throw ShapeError("PPM payload size mismatch");
  write_pnm(path, "P6", h, w, rgb);
}

std::vector<std::uint8_t> read_ppm(const fs::path& path, std::int64_t& h, std::int64_t& w) {
  return read_pnm(path, "P6", 3, h, w);
}

void write_pgm(const fs::path& path, std::int64_t h, std::int64_t w, const std::vector<std::uint8_t>& gray) {
  if (gray.size() != static_cast<std::size_t>(h * w)) throw ShapeError("PGM payload size mismatch");
  write_pnm(path, "P5", h, w, gray);
}

std::vector<std::uint8_t> read_pgm(const fs::path& path, std::int64_t& h, std::int64_t& w) {
  return read_pnm(path, "P5", 1, h, w);
}

void write_dataset(const fs::path& dir, const SampleBatch& batch) {
  fs::create_directories(dir);
  const std::int64_t hw = batch.h * batch.w;
  for (std::int64_t i = 0; i < batch.n; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04lld", static_cast<long long>(i));
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(3 * hw)), gray(static_cast<std::size_t>(hw));
    for (std::int64_t p = 0; p < hw; ++p) {
      for (int c = 0; c < 3; ++c) {
        const float v = batch.images[static_cast<std::size_t>((i * 3 + c) * hw + p)];
        rgb[static_cast<std::size_t>(3 * p + c)] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
      const auto l = batch.labels[static_cast<std::size_t>(i * hw + p)];
      if (l < 0 || l > 255) throw InputError("label does not fit in a byte");
      gray[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(l);
    }
    write_ppm(dir / (std::string(stem) + ".ppm"), batch.h, batch.w, rgb);
    write_pgm(dir / (std::string(stem) + ".pgm"), batch.h, batch.w, gray);
  }
}

SampleBatch load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw NotFoundError("dataset directory " + dir.string() + " does not exist");
  std::map<std::string, fs::path> images;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".ppm") images[entry.path().stem().string()] = entry.path();
  if (images.empty()) throw NotFoundError("no .ppm images in " + dir.string());

  SampleBatch out;
  for (const auto& [stem, img_path] : images) {
    const fs::path label_path = dir / (stem + ".pgm");
    if (!fs::exists(label_path)) throw NotFoundError("image " + img_path.string() + " has no label map");
    std::int64_t h, w, lh, lw;
    const auto rgb = read_ppm(img_path, h, w);
    const auto gray = read_pgm(label_path, lh, lw);
    if (lh != h || lw != w) throw InputError("label map size differs from image " + img_path.string());
    SampleBatch s;
    s.n = 1;
    s.h = h;
    s.w = w;
    s.images.resize(static_cast<std::size_t>(3 * h * w));
    s.labels.resize(static_cast<std::size_t>(h * w));
    for (std::int64_t p = 0; p < h * w; ++p) {
      for (int c = 0; c < 3; ++c)
        s.images[static_cast<std::size_t>(c * h * w + p)] = rgb[static_cast<std::size_t>(3 * p + c)] / 255.0f;
      s.labels[static_cast<std::size_t>(p)] = gray[static_cast<std::size_t>(p)];
    }
    s.provenance = {img_path.string()};
    out.append(s);
  }
  return out;
}

}  // namespace shelfnet::train
