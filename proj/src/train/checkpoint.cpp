#include "shelfnet/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <type_traits>

#include <zlib.h>

#include "shelfnet/arch/serialize.hpp"
#include "shelfnet/errors.hpp"

namespace shelfnet::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

namespace {

constexpr char kMagic[4] = {'S', 'H', 'L', 'F'};

class Writer {
 public:
  std::vector<std::uint8_t> bytes;

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  template <typename U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    raw(&v, sizeof v);
  }
  void str(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}

  void raw(void* dst, std::size_t n) {
    if (n > n_ - pos_) throw CorruptFileError("checkpoint is truncated");
    std::memcpy(dst, p_ + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U get() {
    U v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto len = get<std::uint32_t>();
    std::string s(len, '\0');
    raw(s.data(), len);
    return s;
  }
  bool done() const { return pos_ == n_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* p, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

std::size_t dtype_size(DType d) { return d == DType::f64 ? 8 : 4; }

template <typename T>
constexpr DType dtype_of() {
  return std::is_same_v<T, double> ? DType::f64 : DType::f32;
}

template <typename T>
StoredTensor store(const std::string& name, Shape shape, std::span<const T> values) {
  StoredTensor t{name, dtype_of<T>(), shape, {}};
  t.payload.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(t.payload.data(), values.data(), t.payload.size());
  return t;
}

template <typename T>
void load_into(const StoredTensor& t, std::span<T> dst) {
  std::memcpy(dst.data(), t.payload.data(), t.payload.size());
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, 4);
  w.put(ckpt.version);
  w.str(ckpt.arch_json);
  w.put(ckpt.iteration);
  w.str(ckpt.state.dump());
  w.put(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.payload.size() != static_cast<std::size_t>(t.shape.numel()) * dtype_size(t.dtype))
      throw ShapeError("tensor '" + t.name + "' payload does not match its shape");
    w.str(t.name);
    w.put(static_cast<std::uint8_t>(t.dtype));
    w.put(std::uint8_t{4});
    for (auto d : {t.shape.n, t.shape.c, t.shape.h, t.shape.w}) w.put(static_cast<std::uint32_t>(d));
    w.raw(t.payload.data(), t.payload.size());
  }
  w.put(crc_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CorruptFileError("not a checkpoint file (bad magic)");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  const std::size_t body = bytes.size() - 4;
  Reader r(bytes.data(), body);
  char magic[4];
  r.raw(magic, 4);
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>();
  if (ck.version != kCheckpointVersion) {
    // A version field is only trustworthy when the checksum agrees.
    if (crc_of(bytes.data(), body) != stored_crc) throw CorruptFileError("checkpoint checksum mismatch");
    throw VersionError("checkpoint version " + std::to_string(ck.version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  if (crc_of(bytes.data(), body) != stored_crc) throw CorruptFileError("checkpoint checksum mismatch");
  ck.arch_json = r.str();
  ck.iteration = r.get<std::uint64_t>();
  try {
    ck.state = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("checkpoint state is not valid JSON: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.str();
    const auto tag = r.get<std::uint8_t>();
    if (tag != 1 && tag != 2) throw CorruptFileError("tensor '" + t.name + "' has unknown dtype tag");
    t.dtype = static_cast<DType>(tag);
    if (r.get<std::uint8_t>() != 4) throw CorruptFileError("tensor '" + t.name + "' is not rank 4");
    t.shape.n = r.get<std::uint32_t>();
    t.shape.c = r.get<std::uint32_t>();
    t.shape.h = r.get<std::uint32_t>();
    t.shape.w = r.get<std::uint32_t>();
    t.payload.resize(static_cast<std::size_t>(t.shape.numel()) * dtype_size(t.dtype));
    r.raw(t.payload.data(), t.payload.size());
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CorruptFileError("trailing bytes after the tensor table");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw InputError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template <typename T>
Checkpoint capture(const arch::ExecutableNet<T>& net, const SgdOptimizer<T>& opt, std::uint64_t iteration) {
  Checkpoint ck;
  ck.arch_json = arch::canonical_string(net.graph());
  ck.iteration = iteration;
  ck.state = {{"forward_counter", net.forward_counter()}, {"seed", net.seed()}};
  auto& store_ref = const_cast<arch::ExecutableNet<T>&>(net).parameters();
  for (const auto& p : store_ref.unique()) ck.tensors.push_back(store<T>("param/" + p.name, p.tensor.shape(), p.tensor.values()));
  for (const auto& s : store_ref.states()) {
    const auto c = static_cast<std::int64_t>(s.state->running_mean.size());
    ck.tensors.push_back(store<T>("bn/" + s.name + "/mean", Shape{1, c, 1, 1}, s.state->running_mean));
    ck.tensors.push_back(store<T>("bn/" + s.name + "/var", Shape{1, c, 1, 1}, s.state->running_var));
  }
  for (const auto& p : store_ref.unique()) {
    auto it = opt.velocity().find(p.name);
    if (it != opt.velocity().end()) ck.tensors.push_back(store<T>("velocity/" + p.name, p.tensor.shape(), it->second));
  }
  return ck;
}

template <typename T>
void restore(const Checkpoint& ckpt, arch::ExecutableNet<T>& net, SgdOptimizer<T>& opt) {
  const std::string mine = arch::canonical_string(net.graph());
  if (ckpt.arch_json != mine) {
    std::string theirs = "unparseable";
    try {
      theirs = arch::arch_hash(arch::graph_from_json(nlohmann::json::parse(ckpt.arch_json)));
    } catch (const std::exception&) {
    }
    throw ConfigError("checkpoint architecture " + theirs + " does not match the network " +
                      arch::arch_hash(net.graph()));
  }

  auto expect = [&](const std::string& name, Shape shape) -> const StoredTensor& {
    const StoredTensor* t = ckpt.find(name);
    if (!t) throw NotFoundError("checkpoint is missing tensor '" + name + "'");
    if (t->dtype != dtype_of<T>()) throw ConfigError("tensor '" + name + "' has a different dtype");
    if (!(t->shape == shape)) throw ShapeError("tensor '" + name + "' has shape " + t->shape.str() + ", expected " + shape.str());
    return *t;
  };

  // Validation pass.
  auto& ps = net.parameters();
  const auto params = ps.unique();
  auto states = ps.states();
  std::vector<std::pair<const StoredTensor*, std::span<T>>> plan;
  for (const auto& p : params) {
    Tensor<T> t = p.tensor;
    plan.emplace_back(&expect("param/" + p.name, t.shape()), t.mutable_values());
  }
  for (const auto& s : states) {
    const auto c = static_cast<std::int64_t>(s.state->running_mean.size());
    plan.emplace_back(&expect("bn/" + s.name + "/mean", Shape{1, c, 1, 1}), std::span<T>(s.state->running_mean));
    plan.emplace_back(&expect("bn/" + s.name + "/var", Shape{1, c, 1, 1}), std::span<T>(s.state->running_var));
  }
  std::map<std::string, std::vector<T>> velocity;
  for (const auto& p : params)
    if (ckpt.find("velocity/" + p.name)) {
      const auto& t = expect("velocity/" + p.name, p.tensor.shape());
      auto& v = velocity[p.name];
      v.resize(static_cast<std::size_t>(t.shape.numel()));
      load_into<T>(t, v);
    }
  std::uint64_t counter = 0, seed = 0;
  try {
    counter = ckpt.state.at("forward_counter").get<std::uint64_t>();
    seed = ckpt.state.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception&) {
    throw NotFoundError("checkpoint state lacks the forward counter or seed");
  }

  // Apply pass: nothing below can fail.
  for (auto& [t, dst] : plan) load_into<T>(*t, dst);
  opt.velocity() = std::move(velocity);
  net.set_forward_counter(counter);
  net.set_seed(seed);
}

template Checkpoint capture(const arch::ExecutableNet<float>&, const SgdOptimizer<float>&, std::uint64_t);
template Checkpoint capture(const arch::ExecutableNet<double>&, const SgdOptimizer<double>&, std::uint64_t);
template void restore(const Checkpoint&, arch::ExecutableNet<float>&, SgdOptimizer<float>&);
template void restore(const Checkpoint&, arch::ExecutableNet<double>&, SgdOptimizer<double>&);

}  // namespace shelfnet::train
