#include "mgvq/config.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "mgvq/error.hpp"

namespace mgvq {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const char* type_label(const Json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

// Integers are accepted where a floating value is expected, not the reverse.
bool compatible(const Json& expected, const Json& given) {
  if (expected.is_boolean()) return given.is_boolean();
  if (expected.is_number_integer()) return given.is_number_integer();
  if (expected.is_number()) return given.is_number();
  if (expected.is_string()) return given.is_string();
  if (expected.is_array()) return given.is_array();
  if (expected.is_object()) return given.is_object();
  return true;
}

void check_type(const Json& expected, const Json& given, const std::string& path) {
  if (!compatible(expected, given)) {
    throw ConfigError("config key '" + path + "' expects " + type_label(expected) + ", got " + type_label(given));
  }
}

// Overlays patch onto base. Objects recurse and reject unknown keys; arrays
// and scalars replace after a type check.
void merge_strict(Json& base, const Json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config section '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = join(path, it.key());
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    Json& slot = base[it.key()];
    check_type(slot, it.value(), key);
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else if (slot.is_number_float() && it.value().is_number_integer()) {
      slot = it.value().get<double>();
    } else {
      slot = it.value();
    }
  }
}

template <class T>
T read(const Json& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + join(path, key) + "': " + e.what());
  }
}

// Element-wise strict merge for arrays of records.
Json merge_records(const Json& defaults_elem, const Json& given, const std::string& path) {
  if (!given.is_array()) throw ConfigError("config key '" + path + "' expects array");
  Json out = Json::array();
  for (std::size_t i = 0; i < given.size(); ++i) {
    Json e = defaults_elem;
    merge_strict(e, given[i], path + "." + std::to_string(i));
    out.push_back(std::move(e));
  }
  return out;
}

const char* diversity_name(DiversityAggregation a) {
  return a == DiversityAggregation::PerFrame ? "per_frame" : "batch_averaged";
}

DiversityAggregation parse_diversity(const std::string& s, const std::string& path) {
  if (s == "batch_averaged") return DiversityAggregation::BatchAveraged;
  if (s == "per_frame") return DiversityAggregation::PerFrame;
  throw ConfigError("config key '" + path + "' must be 'batch_averaged' or 'per_frame', got '" + s + "'");
}

const char* window_name(WindowKind w) { return w == WindowKind::Rectangular ? "rectangular" : "hann"; }

WindowKind parse_window(const std::string& s, const std::string& path) {
  if (s == "hann") return WindowKind::Hann;
  if (s == "rectangular") return WindowKind::Rectangular;
  throw ConfigError("config key '" + path + "' must be 'hann' or 'rectangular', got '" + s + "'");
}

Json to_json(const StftConfig& c) {
  return Json{{"fft_size", c.fft_size}, {"hop", c.hop}, {"window_length", c.window_length},
              {"window", window_name(c.window)}};
}

QuantizerConfig quantizer_from_json(const Json& j, Index width, const std::string& path) {
  QuantizerConfig q;
  q.num_codebooks = read<Index>(j, "num_codebooks", path);
  q.codewords_per_book = read<Index>(j, "codewords_per_book", path);
  q.codeword_dim = read<Index>(j, "codeword_dim", path);
  q.input_dim = width;
  q.output_dim = width;
  const Json& t = j.at("temperature");
  q.temperature.start = read<double>(t, "start", path + ".temperature");
  q.temperature.floor = read<double>(t, "floor", path + ".temperature");
  q.temperature.decay = read<double>(t, "decay", path + ".temperature");
  q.diversity = parse_diversity(read<std::string>(j, "diversity", path), path + ".diversity");
  return q;
}

template <class F>
auto config_guard(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

}  // namespace

Json to_json(const QuantizerConfig& q) {
  return Json{{"num_codebooks", q.num_codebooks},
              {"codewords_per_book", q.codewords_per_book},
              {"codeword_dim", q.codeword_dim},
              {"temperature", {{"start", q.temperature.start}, {"floor", q.temperature.floor}, {"decay", q.temperature.decay}}},
              {"diversity", diversity_name(q.diversity)}};
}

Json to_json(const EnhancerConfig& c) {
  Json vqs = Json::array();
  for (const auto& q : c.vq_configs) vqs.push_back(to_json(q));
  Json enabled = Json::array();
  for (bool b : c.vq_enabled) enabled.push_back(b);
  return Json{{"depth", c.depth},
              {"hidden_dim", c.hidden_dim},
              {"kernel", c.kernel},
              {"stride", c.stride},
              {"bottleneck_layers", c.bottleneck_layers},
              {"attention_heads", c.attention_heads},
              {"ffn_dim", c.ffn_dim},
              {"feature_dim", c.feature_dim},
              {"fusion_conv_kernel", c.fusion_conv_kernel},
              {"fusion_enabled", c.fusion_enabled},
              {"normalize_input", c.normalize_input},
              {"vq", vqs},
              {"vq_enabled", enabled}};
}

Json to_json(const TrainConfig& c) {
  Json res = Json::array();
  for (const auto& r : c.stft.resolutions) res.push_back(to_json(r));
  return Json{{"lr_max", c.lr_max},
              {"batch_size", c.batch_size},
              {"total_steps", c.total_steps},
              {"lambda", c.lambda},
              {"seed", c.seed},
              {"checkpoint_interval", c.checkpoint_interval},
              {"warmup_fraction", c.warmup_fraction},
              {"clip_norm", c.clip_norm},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"segment_seconds", c.segment_seconds},
              {"remix", c.remix},
              {"bandmask", c.bandmask},
              {"stft", res}};
}

Json to_json(const CorpusSpec& s) {
  return Json{{"num_pairs", s.num_pairs},       {"min_duration", s.min_duration}, {"max_duration", s.max_duration},
              {"snr_db", s.snr_db},             {"seed", s.seed},                 {"sample_rate", s.sample_rate}};
}

Json to_json(const FeatureConfig& c) {
  return Json{{"provider", c.provider}, {"seed", c.seed}, {"precomputed_dir", c.precomputed_dir}};
}

Json to_json(const ProjectConfig& c) {
  return Json{{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"data", to_json(c.data)},
              {"features", to_json(c.features)}};
}

EnhancerConfig enhancer_config_from_json(const Json& given) {
  const EnhancerConfig defaults = EnhancerConfig::desk();
  Json j = to_json(defaults);
  Json patch = given;
  Json vq_patch;
  if (patch.is_object() && patch.contains("vq")) {
    vq_patch = patch["vq"];
    patch.erase("vq");
  }
  merge_strict(j, patch, "model");
  if (!vq_patch.is_null()) j["vq"] = merge_records(to_json(defaults.vq_configs.front()), vq_patch, "model.vq");

  EnhancerConfig c;
  const std::string p = "model";
  c.depth = read<Index>(j, "depth", p);
  c.hidden_dim = read<Index>(j, "hidden_dim", p);
  c.kernel = read<Index>(j, "kernel", p);
  c.stride = read<Index>(j, "stride", p);
  c.bottleneck_layers = read<Index>(j, "bottleneck_layers", p);
  c.attention_heads = read<Index>(j, "attention_heads", p);
  c.ffn_dim = read<Index>(j, "ffn_dim", p);
  c.feature_dim = read<Index>(j, "feature_dim", p);
  c.fusion_conv_kernel = read<Index>(j, "fusion_conv_kernel", p);
  c.fusion_enabled = read<bool>(j, "fusion_enabled", p);
  c.normalize_input = read<bool>(j, "normalize_input", p);
  const Json& vqs = j.at("vq");
  for (std::size_t i = 0; i < vqs.size(); ++i) {
    c.vq_configs.push_back(quantizer_from_json(vqs[i], c.hidden_dim, "model.vq." + std::to_string(i)));
  }
  c.vq_enabled = read<std::vector<bool>>(j, "vq_enabled", p);
  config_guard([&] {
    c.validate();
    return 0;
  });
  return c;
}

TrainConfig train_config_from_json(const Json& given, Index depth) {
  const TrainConfig defaults = TrainConfig::desk(depth);
  Json j = to_json(defaults);
  Json patch = given;
  Json stft_patch;
  if (patch.is_object() && patch.contains("stft")) {
    stft_patch = patch["stft"];
    patch.erase("stft");
  }
  merge_strict(j, patch, "train");
  if (!stft_patch.is_null()) j["stft"] = merge_records(to_json(StftConfig{}), stft_patch, "train.stft");

  TrainConfig c;
  const std::string p = "train";
  c.lr_max = read<double>(j, "lr_max", p);
  c.batch_size = read<Index>(j, "batch_size", p);
  c.total_steps = read<Index>(j, "total_steps", p);
  c.lambda = read<std::vector<double>>(j, "lambda", p);
  c.seed = read<std::uint64_t>(j, "seed", p);
  c.checkpoint_interval = read<Index>(j, "checkpoint_interval", p);
  c.warmup_fraction = read<double>(j, "warmup_fraction", p);
  c.clip_norm = read<double>(j, "clip_norm", p);
  c.beta1 = read<double>(j, "beta1", p);
  c.beta2 = read<double>(j, "beta2", p);
  c.adam_eps = read<double>(j, "adam_eps", p);
  c.segment_seconds = read<double>(j, "segment_seconds", p);
  c.remix = read<bool>(j, "remix", p);
  c.bandmask = read<bool>(j, "bandmask", p);
  c.stft.resolutions.clear();
  const Json& res = j.at("stft");
  for (std::size_t i = 0; i < res.size(); ++i) {
    const std::string rp = "train.stft." + std::to_string(i);
    StftConfig s;
    s.fft_size = read<Index>(res[i], "fft_size", rp);
    s.hop = read<Index>(res[i], "hop", rp);
    s.window_length = read<Index>(res[i], "window_length", rp);
    s.window = parse_window(read<std::string>(res[i], "window", rp), rp + ".window");
    c.stft.resolutions.push_back(s);
  }
  config_guard([&] {
    c.validate(depth);
    return 0;
  });
  return c;
}

ProjectConfig ProjectConfig::desk() { return ProjectConfig{}; }

ProjectConfig ProjectConfig::full() {
  ProjectConfig c;
  c.model = EnhancerConfig::full();
  c.train = TrainConfig::full(c.model.depth);
  return c;
}

void ProjectConfig::validate() const {
  config_guard([&] {
    model.validate();
    train.validate(model.depth);
    data.validate();
    if (features.provider != "stub" && features.provider != "precomputed") {
      throw ConfigError("features.provider must be 'stub' or 'precomputed', got '" + features.provider + "'");
    }
    if (features.provider == "precomputed" && features.precomputed_dir.empty()) {
      throw ConfigError("features.precomputed_dir is required for the precomputed provider");
    }
    return 0;
  });
}

ProjectConfig project_config_from_json(const Json& given) {
  if (!given.is_object()) throw ConfigError("config root must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    if (it.key() != "model" && it.key() != "train" && it.key() != "data" && it.key() != "features") {
      throw ConfigError("unknown config key '" + it.key() + "'");
    }
  }
  ProjectConfig c;
  if (given.contains("model")) c.model = enhancer_config_from_json(given["model"]);
  // A depth change resizes the default lambda vector.
  Json train = given.value("train", Json::object());
  c.train = train_config_from_json(train, c.model.depth);

  Json data = to_json(CorpusSpec{});
  if (given.contains("data")) merge_strict(data, given["data"], "data");
  c.data.num_pairs = read<Index>(data, "num_pairs", "data");
  c.data.min_duration = read<double>(data, "min_duration", "data");
  c.data.max_duration = read<double>(data, "max_duration", "data");
  c.data.snr_db = read<std::vector<double>>(data, "snr_db", "data");
  c.data.seed = read<std::uint64_t>(data, "seed", "data");
  c.data.sample_rate = read<double>(data, "sample_rate", "data");

  Json feat = to_json(FeatureConfig{});
  if (given.contains("features")) merge_strict(feat, given["features"], "features");
  c.features.provider = read<std::string>(feat, "provider", "features");
  c.features.seed = read<std::uint64_t>(feat, "seed", "features");
  c.features.precomputed_dir = read<std::string>(feat, "precomputed_dir", "features");
  c.validate();
  return c;
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  Json* node = &doc;
  std::string path;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    path = join(path, part);
    if (node->is_object()) {
      if (!node->contains(part)) throw ConfigError("unknown config key '" + path + "'");
      node = &(*node)[part];
    } else if (node->is_array()) {
      std::size_t idx = 0;
      try {
        std::size_t used = 0;
        idx = std::stoul(part, &used);
        if (used != part.size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        throw ConfigError("config key '" + path + "' must be an array index");
      }
      if (idx >= node->size()) throw ConfigError("config key '" + path + "' is out of range");
      node = &(*node)[idx];
    } else {
      throw ConfigError("config key '" + path + "' does not name a section");
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }

  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  if (node->is_string() && !value.is_string()) value = text;
  check_type(*node, value, key);
  if (node->is_number_float() && value.is_number_integer()) value = value.get<double>();
  if (node->is_array() && !node->empty() && !(*node)[0].is_object()) {
    for (const auto& e : value) check_type((*node)[0], e, key + "[]");
  }
  *node = std::move(value);
}

ProjectConfig load_project_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json j = Json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return project_config_from_json(j);
}

std::string config_fingerprint(const Json& doc) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : doc.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace mgvq
