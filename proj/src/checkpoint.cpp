#include <cstring>
#include <fstream>

#include "mgvq/config.hpp"
#include "mgvq/error.hpp"
#include "mgvq/training.hpp"

namespace mgvq {

namespace {

constexpr char kMagic[8] = {'M', 'G', 'V', 'Q', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <class T>
  void pod(const T& v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const NamedTensor& t) {
    str(t.name);
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.value.rank()));
    for (Index d : t.value.shape()) pod<std::int64_t>(d);
    os_.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}
  template <class T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) fail("truncated");
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 32)) fail("implausible string length");
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (!is_) fail("truncated");
    return s;
  }
  NamedTensor tensor() {
    NamedTensor t;
    t.name = str();
    const auto rank = pod<std::uint32_t>();
    if (rank > 8) fail("implausible tensor rank");
    std::vector<Index> shape;
    Index count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = pod<std::int64_t>();
      if (d < 0 || d > (1LL << 32)) fail("bad tensor dimension");
      shape.push_back(static_cast<Index>(d));
      count *= static_cast<Index>(d);
    }
    std::vector<double> data(static_cast<std::size_t>(count));
    is_.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!is_) fail("truncated");
    t.value = Tensor(std::move(shape), std::move(data));
    return t;
  }
  [[noreturn]] void fail(const std::string& what) { throw FormatError("checkpoint " + source_ + ": " + what); }

 private:
  std::istream& is_;
  std::string source_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto& s = ck.state;
  if (s.adam_m.size() != s.parameters.size() || s.adam_v.size() != s.parameters.size()) {
    throw InvalidArgument("optimizer state does not match the parameter list");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + tmp.string());
    Writer w(os);
    os.write(kMagic, sizeof(kMagic));
    w.pod<std::uint32_t>(kCheckpointVersion);
    const Json cfg{{"model", to_json(ck.model)}, {"train", to_json(ck.train)}};
    w.str(cfg.dump());
    w.str(ck.extra);
    w.pod<std::int64_t>(s.step);
    w.pod<double>(s.temperature);
    w.str(s.rng_state);
    w.pod<std::uint64_t>(s.loss_history.size());
    for (double v : s.loss_history) w.pod<double>(v);
    w.pod<std::uint64_t>(s.parameters.size());
    for (std::size_t i = 0; i < s.parameters.size(); ++i) {
      w.tensor(s.parameters[i]);
      w.tensor(s.adam_m[i]);
      w.tensor(s.adam_v[i]);
    }
    os.flush();
    if (!os) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw FormatError("checkpoint not found: " + path.string());
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  Reader r(is, path.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("bad magic");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  Checkpoint ck;
  const Json cfg = Json::parse(r.str(), nullptr, false);
  if (cfg.is_discarded() || !cfg.contains("model") || !cfg.contains("train")) r.fail("corrupt config record");
  try {
    ck.model = enhancer_config_from_json(cfg["model"]);
    ck.train = train_config_from_json(cfg["train"], ck.model.depth);
  } catch (const ConfigError& e) {
    r.fail(std::string("config record: ") + e.what());
  }
  ck.extra = r.str();
  auto& s = ck.state;
  s.step = static_cast<Index>(r.pod<std::int64_t>());
  s.temperature = r.pod<double>();
  s.rng_state = r.str();
  const auto hist = r.pod<std::uint64_t>();
  if (hist > TrainState::kHistoryCapacity) r.fail("history too long");
  for (std::uint64_t i = 0; i < hist; ++i) s.loss_history.push_back(r.pod<double>());
  const auto count = r.pod<std::uint64_t>();
  if (count > 100000) r.fail("implausible parameter count");
  for (std::uint64_t i = 0; i < count; ++i) {
    s.parameters.push_back(r.tensor());
    s.adam_m.push_back(r.tensor());
    s.adam_v.push_back(r.tensor());
  }
  if (is.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return ck;
}

}  // namespace mgvq
