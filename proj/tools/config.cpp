#include "config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "shelfnet/arch/builders.hpp"
#include "shelfnet/errors.hpp"

namespace shelfnet::cli {

using nlohmann::json;

train::TrainConfig ExperimentConfig::default_train() {
  train::TrainConfig t;
  t.schedule = {0.05, 2000, 0.9};
  t.eval_every = 500;
  return t;
}

namespace {

int line_of_offset(const std::string& text, std::size_t offset) {
  int line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) line += text[i] == '\n';
  return line;
}

// Line of the key at `path` (each component searched after the previous).
int line_of(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  for (const auto& key : path) {
    const auto hit = text.find("\"" + key + "\"", pos);
    if (hit == std::string::npos) return 0;
    pos = hit + 1;
  }
  return line_of_offset(text, pos - 1);
}

// Typed access to one JSON object that remembers which keys were consumed.
class Section {
 public:
  Section(const json& obj, std::vector<std::string> path, const std::string& text)
      : obj_(obj), path_(std::move(path)), text_(text) {
    if (!obj.is_object()) fail({}, "expected an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    auto p = path_;
    if (!key.empty()) p.push_back(key);
    std::string name;
    for (const auto& k : p) name += (name.empty() ? "" : ".") + k;
    if (name.empty()) name = "<root>";
    const int line = p.empty() ? 1 : line_of(text_, p);
    throw ConfigError("config field '" + name + "'" + (line ? " (line " + std::to_string(line) + ")" : "") + ": " +
                      what);
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key);
  }

  template <typename U>
  void get(const std::string& key, U& dst) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if constexpr (std::is_same_v<U, bool>) {
      if (!v.is_boolean()) fail(key, "expected true or false");
    } else if constexpr (std::is_integral_v<U>) {
      if (!v.is_number_integer()) fail(key, "expected an integer");
      if (std::is_unsigned_v<U> && v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
        fail(key, "expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<U>) {
      if (!v.is_number()) fail(key, "expected a number");
    } else if constexpr (std::is_same_v<U, std::string>) {
      if (!v.is_string()) fail(key, "expected a string");
    }
    dst = v.get<U>();
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    auto p = path_;
    p.push_back(key);
    return Section(obj_.at(key), p, text_);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  // Any key never asked for is an error.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) fail(it.key(), "unknown key");
  }

  const std::vector<std::string>& path() const { return path_; }

 private:
  const json& obj_;
  std::vector<std::string> path_;
  const std::string& text_;
  std::set<std::string> seen_;
};

template <typename F>
void rethrow_as_field(Section& s, const std::string& key, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    s.fail(key, e.what());
  }
}

}  // namespace

void set_backbone(ExperimentConfig& cfg, const std::string& name) {
  cfg.shelf.backbone = arch::backbone_preset(name, cfg.dilated);
  cfg.backbone = name;
  // Full-size backbones come with the full-size shelf; mini with the mini one.
  const arch::ShelfSpec defaults = name == "mini" ? arch::mini_shelf_spec() : arch::ShelfSpec{};
  cfg.shelf.widths = defaults.widths;
  cfg.shelf.num_classes = defaults.num_classes;
}

ExperimentConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON (line " + std::to_string(line_of_offset(text, e.byte)) +
                      "): " + e.what());
  }
  ExperimentConfig cfg;
  Section root(doc, {}, text);

  if (root.has("model")) {
    Section m = root.child("model");
    if (m.has("backbone")) {
      std::string name;
      m.get("backbone", name);
      rethrow_as_field(m, "backbone", [&] { set_backbone(cfg, name); });
    }
    m.get("dilated", cfg.dilated);
    rethrow_as_field(m, "dilated", [&] { cfg.shelf.backbone = arch::backbone_preset(cfg.backbone, cfg.dilated); });
    if (m.has("variant")) {
      std::string v;
      m.get("variant", v);
      rethrow_as_field(m, "variant", [&] { cfg.shelf.variant = arch::variant_from_string(v); });
    }
    if (m.has("widths")) {
      const json& w = m.raw("widths");
      if (!w.is_array() || w.size() != 4) m.fail("widths", "expected an array of four channel counts");
      for (std::size_t i = 0; i < 4; ++i) {
        if (!w[i].is_number_integer() || w[i].get<std::int64_t>() < 1) m.fail("widths", "expected positive integers");
        cfg.shelf.widths[static_cast<arch::Level>(i)] = w[i].get<std::int64_t>();
      }
    }
    m.get("num_classes", cfg.shelf.num_classes);
    m.get("shared_weights", cfg.shelf.shared_weights);
    m.get("dropout", cfg.shelf.dropout);
    m.finish();
    rethrow_as_field(m, "", [&] { arch::build_shelf(cfg.shelf); });
  }
  if (root.has("input")) {
    Section in = root.child("input");
    in.get("height", cfg.input_h);
    in.get("width", cfg.input_w);
    in.finish();
  }
  if (root.has("train")) {
    Section t = root.child("train");
    auto& tc = cfg.train;
    t.get("base_lr", tc.schedule.base_lr);
    t.get("total_iter", tc.schedule.total_iter);
    t.get("power", tc.schedule.power);
    t.get("momentum", tc.momentum);
    t.get("weight_decay", tc.weight_decay);
    if (t.has("loss")) {
      std::string l;
      t.get("loss", l);
      rethrow_as_field(t, "loss", [&] { tc.loss = train::loss_kind_from_string(l); });
    }
    t.get("ohem_threshold", tc.ohem.threshold);
    t.get("ohem_min_kept", tc.ohem.min_kept);
    t.get("batch_size", cfg.batch_size);
    t.get("eval_every", tc.eval_every);
    t.get("checkpoint_every", cfg.checkpoint_every);
    t.get("augment", cfg.augment);
    t.finish();
    rethrow_as_field(t, "", [&] { train::validate(tc); });
  }
  if (root.has("data")) {
    Section d = root.child("data");
    d.get("source", cfg.data_source);
    if (cfg.data_source != "synthetic" && cfg.data_source != "directory")
      d.fail("source", "expected \"synthetic\" or \"directory\"");
    d.get("directory", cfg.data_dir);
    d.get("val_directory", cfg.val_dir);
    d.get("val_count", cfg.val_count);
    d.finish();
  }
  if (root.has("eval")) {
    Section e = root.child("eval");
    if (e.has("scales")) {
      const json& s = e.raw("scales");
      if (!s.is_array() || s.empty()) e.fail("scales", "expected a non-empty array of numbers");
      cfg.eval_scales.clear();
      for (const auto& v : s) {
        if (!v.is_number() || v.get<double>() <= 0) e.fail("scales", "expected positive numbers");
        cfg.eval_scales.push_back(v.get<double>());
      }
    }
    e.get("flip", cfg.eval_flip);
    e.finish();
  }
  if (root.has("bench")) {
    Section b = root.child("bench");
    b.get("repetitions", cfg.bench_repetitions);
    b.finish();
  }
  root.get("seed", cfg.seed);
  root.get("out", cfg.out);
  root.finish();

  try {
    validate(cfg);
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw NotFoundError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void validate(const ExperimentConfig& cfg) {
  const auto g = arch::build_shelf(cfg.shelf);  // throws on bad geometry
  if (cfg.shelf.num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (!(cfg.shelf.dropout >= 0.0 && cfg.shelf.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (cfg.input_h < 1 || cfg.input_w < 1) throw ConfigError("input size must be positive");
  train::validate(cfg.train);
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (cfg.checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (cfg.val_count < 1) throw ConfigError("val_count must be at least 1");
  if (cfg.data_source == "directory" && cfg.data_dir.empty())
    throw ConfigError("data.source \"directory\" needs data.directory");
  if (cfg.bench_repetitions < 1) throw ConfigError("bench.repetitions must be at least 1");
  for (double s : cfg.eval_scales)
    if (!(s > 0)) throw ConfigError("eval scales must be positive");
}

json to_json(const ExperimentConfig& cfg) {
  json widths = json::array();
  for (int l = 0; l < 4; ++l) widths.push_back(cfg.shelf.widths.at(static_cast<arch::Level>(l)));
  return {
      {"model",
       {{"variant", arch::to_string(cfg.shelf.variant)},
        {"backbone", cfg.backbone},
        {"dilated", cfg.dilated},
        {"widths", widths},
        {"num_classes", cfg.shelf.num_classes},
        {"shared_weights", cfg.shelf.shared_weights},
        {"dropout", cfg.shelf.dropout}}},
      {"input", {{"height", cfg.input_h}, {"width", cfg.input_w}}},
      {"train",
       {{"base_lr", cfg.train.schedule.base_lr},
        {"total_iter", cfg.train.schedule.total_iter},
        {"power", cfg.train.schedule.power},
        {"momentum", cfg.train.momentum},
        {"weight_decay", cfg.train.weight_decay},
        {"loss", train::to_string(cfg.train.loss)},
        {"ohem_threshold", cfg.train.ohem.threshold},
        {"ohem_min_kept", cfg.train.ohem.min_kept},
        {"batch_size", cfg.batch_size},
        {"eval_every", cfg.train.eval_every},
        {"checkpoint_every", cfg.checkpoint_every},
        {"augment", cfg.augment}}},
      {"data",
       {{"source", cfg.data_source},
        {"directory", cfg.data_dir},
        {"val_directory", cfg.val_dir},
        {"val_count", cfg.val_count}}},
      {"eval", {{"scales", cfg.eval_scales}, {"flip", cfg.eval_flip}}},
      {"bench", {{"repetitions", cfg.bench_repetitions}}},
      {"seed", cfg.seed},
      {"out", cfg.out},
  };
}

std::pair<std::int64_t, std::int64_t> parse_size(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t a = 0, b = 0;
    const auto h = std::stoll(s.substr(0, x), &a);
    const auto w = std::stoll(s.substr(x + 1), &b);
    if (a != x || b != s.size() - x - 1 || h < 1 || w < 1) throw std::invalid_argument(s);
    return {h, w};
  } catch (const std::logic_error&) {
    throw ConfigError("size '" + s + "' is not of the form HxW");
  }
}

std::vector<double> parse_scales(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || !(v > 0)) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw ConfigError("scale '" + item + "' is not a positive number");
    }
  }
  if (out.empty()) throw ConfigError("empty scale list");
  return out;
}

}  // namespace shelfnet::cli
