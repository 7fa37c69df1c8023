#include "mgvq/cli.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "mgvq/config.hpp"
#include "mgvq/error.hpp"
#include "mgvq/metrics.hpp"
#include "mgvq/wav.hpp"

namespace mgvq {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  std::string checkpoint;
  std::string grid;
  std::string input;
  std::string corpus;
};

Json resolve_config_doc(const Options& o) {
  Json doc = to_json(o.config_path.empty() ? ProjectConfig::desk() : load_project_config(o.config_path));
  for (const auto& s : o.overrides) apply_override(doc, s);
  if (o.seed) {
    doc["train"]["seed"] = *o.seed;
    doc["data"]["seed"] = *o.seed;
  }
  return doc;
}

std::uint64_t hash_samples(const Waveform& w) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : w.samples) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    h = splitmix64(h ^ bits);
  }
  return h;
}

// Precomputed features are looked up by the content of the waveform they
// were computed for, so any transform of the audio must be disabled.
class PrecomputedStore {
 public:
  void add(const Waveform& w, FeatureBundle b) { table_[hash_samples(w)] = std::make_shared<FeatureBundle>(std::move(b)); }
  FeatureProvider provider() const {
    auto table = table_;
    return [table](const Waveform& w) {
      auto it = table.find(hash_samples(w));
      if (it == table.end()) {
        throw InvalidArgument("no precomputed features for this waveform (cropping and augmentation must be off)");
      }
      return *it->second;
    };
  }

 private:
  std::map<std::uint64_t, std::shared_ptr<FeatureBundle>> table_;
};

fs::path feature_file(const FeatureConfig& fc, const std::string& id) { return fs::path(fc.precomputed_dir) / (id + ".feat"); }

FeatureProvider make_provider(const FeatureConfig& fc, Index dim, const std::vector<std::pair<std::string, Waveform>>& inputs) {
  if (fc.provider == "stub") return stub_provider(dim, fc.seed);
  PrecomputedStore store;
  for (const auto& [id, w] : inputs) store.add(w, load_precomputed(feature_file(fc, id), dim));
  return store.provider();
}

std::vector<std::pair<std::string, Waveform>> noisy_inputs(const Corpus& corpus) {
  std::vector<std::pair<std::string, Waveform>> out;
  for (Index i = 0; i < corpus.size(); ++i) {
    auto s = corpus.get(i);
    out.emplace_back(s.id, std::move(s.noisy));
  }
  return out;
}

std::unique_ptr<Corpus> open_corpus(const Options& o, const ProjectConfig& cfg) {
  if (!o.corpus.empty()) {
    if (!fs::is_directory(o.corpus)) throw InvalidArgument("corpus directory not found: " + o.corpus);
    return std::make_unique<WavCorpus>(o.corpus, cfg.data.sample_rate);
  }
  return std::make_unique<SyntheticCorpus>(cfg.data);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

void write_fingerprint(const fs::path& dir, const Json& doc) {
  write_text(dir / "config.json", doc.dump(2) + "\n");
  write_text(dir / "fingerprint.txt", config_fingerprint(doc) + "\n");
}

fs::path require_output_dir(const Options& o) {
  if (o.output_dir.empty()) throw ConfigError("--output-dir is required");
  return o.output_dir;
}

struct LoadedModel {
  Checkpoint checkpoint;
  std::unique_ptr<Enhancer> model;
  FeatureConfig features;
  Json doc;
};

LoadedModel load_model(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  LoadedModel m;
  m.checkpoint = load_checkpoint(o.checkpoint);
  m.model = std::make_unique<Enhancer>(m.checkpoint.model, m.checkpoint.train.seed);
  load_parameters(*m.model, m.checkpoint.state.parameters);
  const Json extra = Json::parse(m.checkpoint.extra.empty() ? "{}" : m.checkpoint.extra, nullptr, false);
  m.doc = extra.is_object() && extra.contains("config") ? extra["config"] : Json::object();
  if (m.doc.contains("features")) {
    Json fdoc = to_json(FeatureConfig{});
    for (auto it = m.doc["features"].begin(); it != m.doc["features"].end(); ++it) fdoc[it.key()] = it.value();
    m.features.provider = fdoc["provider"].get<std::string>();
    m.features.seed = fdoc["seed"].get<std::uint64_t>();
    m.features.precomputed_dir = fdoc["precomputed_dir"].get<std::string>();
  }
  return m;
}

int cmd_synth_corpus(const Options& o, std::ostream& out) {
  const Json doc = resolve_config_doc(o);
  const ProjectConfig cfg = project_config_from_json(doc);
  const fs::path dir = require_output_dir(o);
  SyntheticCorpus corpus(cfg.data);
  write_corpus(dir, corpus);
  write_fingerprint(dir, doc);
  out << "wrote " << corpus.size() << " pairs to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  const Json doc = resolve_config_doc(o);
  const ProjectConfig cfg = project_config_from_json(doc);
  const fs::path dir = require_output_dir(o);
  std::optional<Checkpoint> resume;
  if (!o.checkpoint.empty()) resume = load_checkpoint(o.checkpoint);
  auto corpus = open_corpus(o, cfg);
  if (corpus->size() < 1) throw InvalidArgument("training corpus is empty");
  const FeatureProvider features =
      make_provider(cfg.features, cfg.model.feature_dim, cfg.features.provider == "stub" ? decltype(noisy_inputs(*corpus)){} : noisy_inputs(*corpus));

  Enhancer model(cfg.model, cfg.train.seed);
  Trainer trainer(model, *corpus, cfg.train, features);
  if (resume) trainer.restore(resume->state);

  fs::create_directories(dir);
  write_fingerprint(dir, doc);
  std::ofstream log(dir / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
  TrainOptions opts;
  opts.checkpoint_dir = dir / "checkpoints";
  opts.log = &log;
  opts.extra = Json{{"config", doc}, {"fingerprint", config_fingerprint(doc)}}.dump();
  const TrainState state = train(trainer, opts);
  out << "trained " << state.step << " steps; checkpoint " << (opts.checkpoint_dir / "latest.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_enhance(const Options& o, std::ostream& out) {
  const fs::path dir = require_output_dir(o);
  if (o.input.empty()) throw ConfigError("--input is required");
  LoadedModel m = load_model(o);
  std::vector<fs::path> files;
  if (fs::is_directory(o.input)) {
    for (const auto& e : fs::directory_iterator(o.input)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(o.input)) {
    files.push_back(o.input);
  } else {
    throw InvalidArgument("input not found: " + o.input);
  }
  if (files.empty()) throw InvalidArgument("no .wav files in " + o.input);
  std::vector<std::pair<std::string, Waveform>> inputs;
  for (const auto& f : files) inputs.emplace_back(f.stem().string(), read_wav(f));
  const FeatureProvider features = make_provider(m.features, m.model->config().feature_dim, inputs);
  std::vector<Waveform> enhanced;
  for (const auto& [id, w] : inputs) {
    std::optional<FeatureBundle> ctx;
    if (m.model->config().fusion_enabled) ctx = features(w);
    enhanced.push_back(m.model->enhance(w, ctx ? &*ctx : nullptr));
  }
  fs::create_directories(dir);
  for (std::size_t i = 0; i < files.size(); ++i) write_wav(dir / files[i].filename(), enhanced[i], WavEncoding::Float32);
  write_fingerprint(dir, m.doc);
  out << "enhanced " << files.size() << " file(s) into " << dir.string() << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const fs::path dir = require_output_dir(o);
  LoadedModel m = load_model(o);
  ProjectConfig cfg;
  if (m.doc.contains("data")) cfg.data = project_config_from_json(Json{{"data", m.doc["data"]}}).data;
  if (!o.overrides.empty() || o.seed) {
    Json d = to_json(cfg);
    for (const auto& s : o.overrides) apply_override(d, s);
    if (o.seed) d["data"]["seed"] = *o.seed;
    cfg.data = project_config_from_json(Json{{"data", d["data"]}}).data;
  }
  auto corpus = open_corpus(o, cfg);
  const FeatureProvider features = make_provider(m.features, m.model->config().feature_dim,
                                                 m.features.provider == "stub" ? decltype(noisy_inputs(*corpus)){} : noisy_inputs(*corpus));
  const std::string fp = config_fingerprint(m.doc);
  const EvalReport report = evaluate(*m.model, *corpus, features, fp);
  fs::create_directories(dir);
  write_text(dir / "eval_report.json", report.to_json() + "\n");
  write_fingerprint(dir, m.doc);
  out << "si_sdr noisy " << report.mean_si_sdr_noisy << " dB, enhanced " << report.mean_si_sdr_enhanced << " dB\n";
  return kExitOk;
}

int cmd_inspect_codebooks(const Options& o, std::ostream& out) {
  const fs::path dir = require_output_dir(o);
  LoadedModel m = load_model(o);
  std::vector<Index> enabled;
  for (Index i = 0; i <= m.model->config().depth; ++i) {
    if (m.model->quantizer(i)) enabled.push_back(i);
  }
  fs::create_directories(dir);
  Json summary = Json::array();
  for (Index i : enabled) {
    const CodebookSet& books = m.model->quantizer(i)->codebooks();
    const std::string stem = "vq" + std::to_string(i);
    export_codewords_csv(books, dir / (stem + "_codewords.csv"));
    Json entry{{"quantizer", i}, {"books", books.num_books}, {"codewords", books.codewords_per_book}, {"dim", books.dim}};
    if (books.codewords_per_book >= 3) {
      const auto p = export_codebook_projection(books, dir / (stem + "_projection.csv"), dir / (stem + "_projection.svg"));
      entry["explained_variance"] = p.explained_variance;
    }
    summary.push_back(entry);
  }
  write_text(dir / "codebooks.json", summary.dump(2) + "\n");
  write_fingerprint(dir, m.doc);
  out << "exported " << enabled.size() << " quantizer(s) to " << dir.string() << "\n";
  return kExitOk;
}

std::vector<std::vector<bool>> read_grid(const std::string& path, Index depth) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid file " + path);
  const Json g = Json::parse(in, nullptr, false);
  if (g.is_discarded() || !g.is_object() || !g.contains("masks")) throw ConfigError("grid file needs a \"masks\" entry");
  for (auto it = g.begin(); it != g.end(); ++it) {
    if (it.key() != "masks") throw ConfigError("unknown grid key '" + it.key() + "'");
  }
  const Json& masks = g["masks"];
  if (masks.is_string()) {
    if (masks.get<std::string>() != "single") throw ConfigError("grid masks must be \"single\" or a list of masks");
    return single_vq_ablation_masks(depth);
  }
  if (!masks.is_array() || masks.empty()) throw ConfigError("grid masks must be a non-empty list");
  std::vector<std::vector<bool>> out;
  for (const auto& m : masks) {
    if (!m.is_array() || static_cast<Index>(m.size()) != depth + 1) {
      throw ConfigError("each grid mask needs depth+1 = " + std::to_string(depth + 1) + " booleans");
    }
    std::vector<bool> mask;
    for (const auto& b : m) {
      if (!b.is_boolean()) throw ConfigError("grid masks hold booleans");
      mask.push_back(b.get<bool>());
    }
    out.push_back(std::move(mask));
  }
  return out;
}

std::string mask_label(const std::vector<bool>& mask) {
  std::string s;
  for (bool b : mask) s += b ? '1' : '0';
  return s;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const Json doc = resolve_config_doc(o);
  const ProjectConfig cfg = project_config_from_json(doc);
  const fs::path dir = require_output_dir(o);
  if (o.grid.empty()) throw ConfigError("--grid is required");
  const auto masks = read_grid(o.grid, cfg.model.depth);
  if (cfg.features.provider != "stub") throw ConfigError("ablate supports the stub feature provider only");
  auto train_corpus = open_corpus(o, cfg);
  CorpusSpec eval_spec = cfg.data;
  eval_spec.seed = derive_seed({cfg.data.seed, 0x6576616c});
  eval_spec.num_pairs = std::min<Index>(cfg.data.num_pairs, 8);
  SyntheticCorpus eval_corpus(eval_spec);
  const AblationReport report = run_ablation(masks, cfg.model, cfg.train, *train_corpus, eval_corpus,
                                             stub_provider(cfg.model.feature_dim, cfg.features.seed), cfg.train.seed);
  Json rows = Json::array();
  std::ostringstream csv;
  csv.precision(10);
  csv << "mask,final_se,final_total,mean_perplexity,eval_si_sdr";
  for (Index i = 0; i <= cfg.model.depth; ++i) csv << ",perplexity_vq" << i;
  csv << "\n";
  for (const auto& r : report.rows) {
    Json ppl = Json::array();
    csv << mask_label(r.mask) << "," << r.final_se << "," << r.final_total << "," << r.mean_perplexity << ","
        << r.eval_si_sdr;
    for (const auto& p : r.perplexity) {
      ppl.push_back(p ? Json(*p) : Json());
      csv << ",";
      if (p) csv << *p;
    }
    csv << "\n";
    rows.push_back({{"mask", r.mask},
                    {"final_se", r.final_se},
                    {"final_total", r.final_total},
                    {"perplexity", ppl},
                    {"mean_perplexity", r.mean_perplexity},
                    {"eval_si_sdr", r.eval_si_sdr}});
  }
  fs::create_directories(dir);
  write_text(dir / "ablation_report.json",
             Json{{"schema_version", 1}, {"steps", report.steps}, {"config_fingerprint", config_fingerprint(doc)}, {"rows", rows}}
                     .dump(2) +
                 "\n");
  write_text(dir / "ablation_report.csv", csv.str());
  write_fingerprint(dir, doc);
  out << "ablation over " << report.rows.size() << " masks written to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_print_config(const Options& o, std::ostream& out) {
  const Json doc = resolve_config_doc(o);
  project_config_from_json(doc);
  out << doc.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-granularity VQ speech enhancement", "mgvq"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON config file");
    sub->add_option("--set", o.overrides, "Override a config entry, dotted.key=value (repeatable)");
    sub->add_option("--seed", o.seed, "Seed for training and data generation");
    sub->add_option("--output-dir", o.output_dir, "Directory receiving every output");
  };
  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const Options&, std::ostream&);
  };
  const Sub subs[] = {
      {"train", "Train a model", cmd_train},
      {"enhance", "Enhance a wav file or directory", cmd_enhance},
      {"eval", "Evaluate a checkpoint on a corpus", cmd_eval},
      {"inspect-codebooks", "Export codewords and 2-D projections", cmd_inspect_codebooks},
      {"synth-corpus", "Write a synthetic clean/noisy corpus", cmd_synth_corpus},
      {"ablate", "Train one model per quantizer mask", cmd_ablate},
      {"print-config", "Print the resolved configuration", cmd_print_config},
  };
  std::map<const CLI::App*, const Sub*> lookup;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub);
    const std::string name = s.name;
    if (name == "train" || name == "enhance" || name == "eval" || name == "inspect-codebooks") {
      sub->add_option("--checkpoint", o.checkpoint, name == "train" ? "Checkpoint to resume from" : "Model checkpoint");
    }
    if (name == "enhance") sub->add_option("--input", o.input, "Input wav file or directory");
    if (name == "train" || name == "eval" || name == "ablate") {
      sub->add_option("--corpus", o.corpus, "Corpus directory with clean/ and noisy/ (default: synthetic)");
    }
    if (name == "ablate") sub->add_option("--grid", o.grid, "Grid file: {\"masks\": \"single\" | [[bool, ...], ...]}");
    lookup[sub] = &s;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfigError;
  }
  const Sub* chosen = nullptr;
  for (const auto& [sub, s] : lookup) {
    if (sub->parsed()) chosen = s;
  }
  try {
    return chosen->run(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}

}  // namespace mgvq
