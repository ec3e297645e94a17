#pragma once

// Experiment configuration (JSON) and the runners behind the command-line
// verbs: rftca-bench, fed-run, comm-table and validate.

#include "fedrf/core.hpp"
#include "fedrf/data_io.hpp"
#include "fedrf/kernel_rff.hpp"
#include "fedrf/net_sim.hpp"
#include "fedrf/protocol.hpp"
#include "fedrf/tca.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fedrf {

using Json = nlohmann::ordered_json;

struct DatasetConfig {
  // Exactly one of: a synthetic spec, or per-domain files.
  std::optional<SynthSpec> synthetic = SynthSpec{};
  MatrixFormat format = MatrixFormat::csv;
  std::vector<std::string> sources;
  std::string target;
  bool normalize = false;
};

struct BenchConfig {
  std::vector<std::size_t> n_features{100, 500, 1000, 2000, 5000};
  bool vanilla = true;
};

struct CommConfig {
  std::vector<std::size_t> clients{3};
  std::vector<std::size_t> samples{100, 1000, 10000};
  std::vector<std::size_t> n_features{1000};
  std::vector<std::size_t> m{100};
  std::size_t ciphertext = 4;  // P, expansion factor of homomorphic ciphertexts
  bool measure = true;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  double sigma = 0.0;  // 0: median heuristic
  std::size_t n_features = 1000;
  std::optional<std::uint64_t> kernel_seed;  // defaults to the run seed
  std::optional<double> gamma;               // defaults to default_gamma(n_S, n_T)
  std::size_t m = 100;
  ProtocolConfig protocol = default_protocol();
  std::vector<std::uint64_t> seeds{0};
  BenchConfig bench;
  CommConfig comm;
  std::string output = "out";

  static ProtocolConfig default_protocol() {
    ProtocolConfig p;
    p.rounds = 1600;
    p.classifier_interval = 50;
    p.lambda = 1.0;
    p.hidden = {};
    p.feature_dim = 0;  // 0: input dimension
    p.identity_init = true;
    p.median_scale = 2.0;
    p.source_extractor_lr_scale = 0.0;
    p.eval_every = 50;
    p.sgd.learning_rate = 0.003;
    p.sgd.steps = 4;
    p.sgd.momentum = 0.9;
    p.sgd.batch_size = 64;
    return p;
  }

  void validate() const;

  /// Protocol settings for one run, with the input dimension resolved.
  ProtocolConfig protocol_for(std::uint64_t seed, Index input_dim) const {
    ProtocolConfig p = protocol;
    p.n_features = n_features;
    p.m = m;
    p.sigma = sigma;
    p.seed = seed;
    p.sgd.seed = seed;
    p.network.seed = seed;
    if (p.feature_dim == 0) p.feature_dim = input_dim;
    return p;
  }
};

namespace detail {

/// Typed access to one JSON object, with errors naming the dotted field.
class ConfigReader {
 public:
  ConfigReader(const Json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where("") + " must be an object", path_);
  }

  bool has(const char* key) const { return node_.contains(key); }

  template <class T>
  void get(const char* key, T& out) const {
    if (!node_.contains(key)) return;
    try {
      out = node_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where(key) + " has the wrong type", where(key));
    }
  }

  ConfigReader child(const char* key) const { return ConfigReader(node_.at(key), where(key)); }

  void allow(std::initializer_list<const char*> keys) const {
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& item : node_.items()) {
      if (!known.count(item.key())) throw ConfigError("unknown field " + where(item.key().c_str()), where(item.key().c_str()));
    }
  }

  std::string where(const char* key) const {
    if (*key == '\0') return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const Json& node_;
  std::string path_;
};

template <class E>
E parse_enum(const ConfigReader& r, const char* key, E fallback, std::initializer_list<std::pair<const char*, E>> names) {
  if (!r.has(key)) return fallback;
  std::string value;
  r.get(key, value);
  for (const auto& [name, e] : names) {
    if (value == name) return e;
  }
  throw ConfigError(r.where(key) + ": unknown value '" + value + "'", r.where(key));
}

inline const std::initializer_list<std::pair<const char*, OrderingMode>> kOrderingNames{
    {"all", OrderingMode::all}, {"ordered", OrderingMode::ordered}, {"random", OrderingMode::random}};

template <class E>
std::string enum_name(E value, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [name, e] : names) {
    if (e == value) return name;
  }
  return "unknown";
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& root) {
  using detail::ConfigReader;
  ExperimentConfig cfg;
  const ConfigReader top(root, "");
  top.allow({"dataset", "kernel", "tca", "protocol", "network", "evaluation", "bench", "comm", "output"});
  top.get("output", cfg.output);

  if (top.has("dataset")) {
    const auto d = top.child("dataset");
    d.allow({"synthetic", "format", "sources", "target", "normalize"});
    d.get("normalize", cfg.dataset.normalize);
    cfg.dataset.format =
        detail::parse_enum(d, "format", MatrixFormat::csv, {{"csv", MatrixFormat::csv}, {"binary", MatrixFormat::binary}});
    d.get("sources", cfg.dataset.sources);
    d.get("target", cfg.dataset.target);
    if (d.has("sources") || d.has("target")) cfg.dataset.synthetic.reset();
    if (d.has("synthetic")) {
      const auto s = d.child("synthetic");
      s.allow({"classes", "dim", "sources", "shift", "rotation", "separation", "cluster_sigma", "source_severity",
               "samples_per_domain", "test_fraction", "seed"});
      SynthSpec spec;
      s.get("classes", spec.classes);
      s.get("dim", spec.dim);
      s.get("sources", spec.sources);
      s.get("shift", spec.shift);
      s.get("rotation", spec.rotation);
      s.get("separation", spec.separation);
      s.get("cluster_sigma", spec.cluster_sigma);
      s.get("source_severity", spec.source_severity);
      s.get("samples_per_domain", spec.samples_per_domain);
      s.get("test_fraction", spec.test_fraction);
      s.get("seed", spec.seed);
      cfg.dataset.synthetic = spec;
    }
  }

  if (top.has("kernel")) {
    const auto k = top.child("kernel");
    k.allow({"sigma", "n_features", "seed"});
    k.get("sigma", cfg.sigma);
    k.get("n_features", cfg.n_features);
    if (k.has("seed")) {
      std::uint64_t seed = 0;
      k.get("seed", seed);
      cfg.kernel_seed = seed;
    }
  }

  if (top.has("tca")) {
    const auto t = top.child("tca");
    t.allow({"gamma", "m"});
    t.get("m", cfg.m);
    if (t.has("gamma")) {
      double gamma = 0.0;
      t.get("gamma", gamma);
      cfg.gamma = gamma;
    }
  }

  ProtocolConfig& p = cfg.protocol;
  if (top.has("protocol")) {
    const auto r = top.child("protocol");
    r.allow({"rounds", "classifier_interval", "lambda", "participation", "classifier_mode", "policy", "optimizer",
             "hidden", "feature_dim", "identity_init", "median_scale", "eval_every", "source_extractor_lr_scale",
             "aligner_from_classification"});
    r.get("rounds", p.rounds);
    r.get("classifier_interval", p.classifier_interval);
    r.get("lambda", p.lambda);
    p.participation = detail::parse_enum(r, "participation", p.participation,
                                         {{"full", Participation::full}, {"sampled", Participation::sampled}});
    p.classifier_mode = detail::parse_enum(r, "classifier_mode", p.classifier_mode,
                                           {{"interval", ClassifierMode::interval}, {"hard_vote", ClassifierMode::hard_vote}});
    r.get("hidden", p.hidden);
    r.get("feature_dim", p.feature_dim);
    r.get("identity_init", p.identity_init);
    r.get("median_scale", p.median_scale);
    r.get("eval_every", p.eval_every);
    r.get("source_extractor_lr_scale", p.source_extractor_lr_scale);
    r.get("aligner_from_classification", p.aligner_from_classification);
    if (r.has("policy")) {
      const auto pol = r.child("policy");
      pol.allow({"levels", "feature_order", "weight_order"});
      if (pol.has("levels")) {
        std::vector<std::string> names;
        pol.get("levels", names);
        if (names.size() != kMessageKinds) throw ConfigError(pol.where("levels") + " needs three entries", pol.where("levels"));
        for (std::size_t i = 0; i < kMessageKinds; ++i) {
          if (names[i] != "A" && names[i] != "B" && names[i] != "C") {
            throw ConfigError(pol.where("levels") + " entries must be A, B or C", pol.where("levels"));
          }
          p.policy.level[i] = names[i][0] - 'A';
        }
      }
      p.policy.feature_order = detail::parse_enum(pol, "feature_order", p.policy.feature_order, detail::kOrderingNames);
      p.policy.weight_order = detail::parse_enum(pol, "weight_order", p.policy.weight_order, detail::kOrderingNames);
    }
    if (r.has("optimizer")) {
      const auto o = r.child("optimizer");
      o.allow({"learning_rate", "batch_size", "momentum", "weight_decay", "steps"});
      o.get("learning_rate", p.sgd.learning_rate);
      o.get("batch_size", p.sgd.batch_size);
      o.get("momentum", p.sgd.momentum);
      o.get("weight_decay", p.sgd.weight_decay);
      o.get("steps", p.sgd.steps);
    }
  }

  if (top.has("network")) {
    const auto n = top.child("network");
    n.allow({"drop_probability", "availability"});
    if (n.has("drop_probability")) {
      std::vector<double> drops;
      n.get("drop_probability", drops);
      if (drops.size() != kMessageKinds) {
        throw ConfigError(n.where("drop_probability") + " needs one entry per message kind (3)", n.where("drop_probability"));
      }
      std::copy(drops.begin(), drops.end(), p.network.drop_probability.begin());
    }
    n.get("availability", p.network.availability);
  }

  if (top.has("evaluation")) {
    const auto e = top.child("evaluation");
    e.allow({"seeds", "repeats"});
    e.get("seeds", cfg.seeds);
    if (e.has("repeats")) {
      std::size_t repeats = 0;
      e.get("repeats", repeats);
      if (e.has("seeds")) throw ConfigError("evaluation: give seeds or repeats, not both", "evaluation.repeats");
      cfg.seeds.clear();
      for (std::size_t i = 0; i < repeats; ++i) cfg.seeds.push_back(i);
    }
  }

  if (top.has("bench")) {
    const auto b = top.child("bench");
    b.allow({"n_features", "vanilla"});
    b.get("n_features", cfg.bench.n_features);
    b.get("vanilla", cfg.bench.vanilla);
  }

  if (top.has("comm")) {
    const auto c = top.child("comm");
    c.allow({"clients", "samples", "n_features", "m", "ciphertext", "measure"});
    c.get("clients", cfg.comm.clients);
    c.get("samples", cfg.comm.samples);
    c.get("n_features", cfg.comm.n_features);
    c.get("m", cfg.comm.m);
    c.get("ciphertext", cfg.comm.ciphertext);
    c.get("measure", cfg.comm.measure);
  }
  return cfg;
}

inline void ExperimentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why, field); };
  if (dataset.synthetic) {
    try {
      dataset.synthetic->validate();
    } catch (const InvalidInputError& e) {
      fail("dataset.synthetic", e.what());
    }
  } else {
    if (dataset.sources.empty()) fail("dataset.sources", "no source domains given");
    if (dataset.target.empty()) fail("dataset.target", "no target domain given");
  }
  if (sigma < 0.0 || !std::isfinite(sigma)) fail("kernel.sigma", "must be >= 0 (0 selects the median heuristic)");
  if (n_features < 1) fail("kernel.n_features", "must be >= 1");
  if (m < 1) fail("tca.m", "must be >= 1");
  if (m > 2 * n_features) fail("tca.m", "must not exceed 2N = " + std::to_string(2 * n_features));
  if (gamma && !(*gamma > 0.0)) fail("tca.gamma", "must be > 0");
  if (protocol.rounds < 1) fail("protocol.rounds", "must be >= 1");
  if (protocol.classifier_interval < 1) fail("protocol.classifier_interval", "T_C must be >= 1");
  if (!(protocol.lambda >= 0.0)) fail("protocol.lambda", "must be >= 0");
  if (!(protocol.median_scale > 0.0)) fail("protocol.median_scale", "must be > 0");
  if (protocol.eval_every < 1) fail("protocol.eval_every", "must be >= 1");
  if (protocol.feature_dim < 0) fail("protocol.feature_dim", "must be >= 0");
  if (!(protocol.source_extractor_lr_scale >= 0.0)) fail("protocol.source_extractor_lr_scale", "must be >= 0");
  if (protocol.identity_init && !protocol.hidden.empty()) fail("protocol.identity_init", "needs no hidden layers");
  if (dataset.synthetic && protocol.identity_init && protocol.feature_dim != 0 &&
      protocol.feature_dim != static_cast<Index>(dataset.synthetic->dim)) {
    fail("protocol.feature_dim", "identity_init needs feature_dim equal to the input dimension");
  }
  try {
    protocol.sgd.validate();
  } catch (const InvalidInputError& e) {
    fail("protocol.optimizer", e.what());
  }
  try {
    protocol.policy.validate();
  } catch (const InvalidInputError& e) {
    fail("protocol.policy", e.what());
  }
  try {
    protocol.network.validate();
  } catch (const InvalidInputError& e) {
    fail("network", e.what());
  }
  if (seeds.empty()) fail("evaluation.seeds", "at least one seed is required");
  if (bench.n_features.empty()) fail("bench.n_features", "grid is empty");
  for (std::size_t n : bench.n_features) {
    if (n < 1) fail("bench.n_features", "entries must be >= 1");
  }
  if (comm.clients.empty() || comm.samples.empty() || comm.n_features.empty() || comm.m.empty()) {
    fail("comm", "every grid must be nonempty");
  }
  if (output.empty()) fail("output", "must name a directory");
}

inline Json to_json(const ExperimentConfig& cfg) {
  Json j;
  Json d;
  if (cfg.dataset.synthetic) {
    const auto& s = *cfg.dataset.synthetic;
    d["synthetic"] = {{"classes", s.classes},
                      {"dim", s.dim},
                      {"sources", s.sources},
                      {"shift", s.shift},
                      {"rotation", s.rotation},
                      {"separation", s.separation},
                      {"cluster_sigma", s.cluster_sigma},
                      {"source_severity", s.source_severity},
                      {"samples_per_domain", s.samples_per_domain},
                      {"test_fraction", s.test_fraction},
                      {"seed", s.seed}};
  } else {
    d["format"] = cfg.dataset.format == MatrixFormat::csv ? "csv" : "binary";
    d["sources"] = cfg.dataset.sources;
    d["target"] = cfg.dataset.target;
  }
  d["normalize"] = cfg.dataset.normalize;
  j["dataset"] = d;
  j["kernel"] = {{"sigma", cfg.sigma}, {"n_features", cfg.n_features}};
  if (cfg.kernel_seed) j["kernel"]["seed"] = *cfg.kernel_seed;
  j["tca"] = {{"m", cfg.m}};
  if (cfg.gamma) j["tca"]["gamma"] = *cfg.gamma;
  const auto& p = cfg.protocol;
  Json levels = Json::array();
  for (int l : p.policy.level) levels.push_back(std::string(1, static_cast<char>('A' + l)));
  j["protocol"] = {
      {"rounds", p.rounds},
      {"classifier_interval", p.classifier_interval},
      {"lambda", p.lambda},
      {"participation", p.participation == Participation::full ? "full" : "sampled"},
      {"classifier_mode", p.classifier_mode == ClassifierMode::interval ? "interval" : "hard_vote"},
      {"policy",
       {{"levels", levels},
        {"feature_order", detail::enum_name(p.policy.feature_order, detail::kOrderingNames)},
        {"weight_order", detail::enum_name(p.policy.weight_order, detail::kOrderingNames)}}},
      {"optimizer",
       {{"learning_rate", p.sgd.learning_rate},
        {"batch_size", p.sgd.batch_size},
        {"momentum", p.sgd.momentum},
        {"weight_decay", p.sgd.weight_decay},
        {"steps", p.sgd.steps}}},
      {"hidden", p.hidden},
      {"feature_dim", p.feature_dim},
      {"identity_init", p.identity_init},
      {"median_scale", p.median_scale},
      {"eval_every", p.eval_every},
      {"source_extractor_lr_scale", p.source_extractor_lr_scale},
      {"aligner_from_classification", p.aligner_from_classification}};
  j["network"] = {{"drop_probability", p.network.drop_probability}, {"availability", p.network.availability}};
  j["evaluation"] = {{"seeds", cfg.seeds}};
  j["bench"] = {{"n_features", cfg.bench.n_features}, {"vanilla", cfg.bench.vanilla}};
  j["comm"] = {{"clients", cfg.comm.clients},   {"samples", cfg.comm.samples},       {"n_features", cfg.comm.n_features},
               {"m", cfg.comm.m},               {"ciphertext", cfg.comm.ciphertext}, {"measure", cfg.comm.measure}};
  j["output"] = cfg.output;
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path, "config");
  Json root;
  try {
    root = Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what(), "config");
  }
  return parse_config(root);
}

/// Sets a dotted field ("protocol.rounds") in a JSON config tree. The value
/// is parsed as JSON, falling back to a plain string.
inline void apply_override(Json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like field=value: " + assignment, assignment);
  const std::string field = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  Json* node = &root;
  std::size_t start = 0;
  for (;;) {
    const auto dot = field.find('.', start);
    const std::string key = field.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("empty path segment in override " + field, field);
    if (!node->is_object()) *node = Json::object();
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

/// Domains for one run seed: K labelled sources followed by the target.
inline std::vector<DomainDataset> load_domains(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::vector<DomainDataset> out;
  if (cfg.dataset.synthetic) {
    SynthSpec spec = *cfg.dataset.synthetic;
    spec.seed += seed;
    out = generate_synthetic(spec);
  } else {
    auto read = [&](const std::string& path, bool target) {
      MatrixFile file = load_matrix(path, cfg.dataset.format);
      DomainDataset d;
      d.name = std::filesystem::path(path).stem().string();
      d.features = std::move(file.features);
      d.labels = std::move(file.labels);
      d.split.assign(static_cast<std::size_t>(d.samples()), Split::train);
      if (d.samples() < 1) throw InvalidInputError("load_domains: " + path + " holds no samples");
      if (!target && !d.labelled()) throw InvalidInputError("load_domains: source " + path + " has no label column");
      if (target) d.hide_labels();
      return d;
    };
    for (const auto& path : cfg.dataset.sources) out.push_back(read(path, false));
    out.push_back(read(cfg.dataset.target, true));
  }
  if (cfg.dataset.normalize) {
    for (auto& d : out) d.features.data = unit_normalize(d.features.data);
  }
  return out;
}

/// Label of the nearest source column for every target column.
inline std::vector<int> nearest_neighbour(const Matrix& source, const std::vector<int>& labels, const Matrix& target) {
  require_shape(source.rows() == target.rows() && static_cast<Index>(labels.size()) == source.cols() && source.cols() > 0,
                "nearest_neighbour: shape mismatch");
  const Vector s_norms = source.colwise().squaredNorm().transpose();
  std::vector<int> out(static_cast<std::size_t>(target.cols()));
  for (Index j = 0; j < target.cols(); ++j) {
    const Vector dist = s_norms - 2.0 * source.transpose() * target.col(j);
    Index arg = 0;
    dist.minCoeff(&arg);
    out[static_cast<std::size_t>(j)] = labels[static_cast<std::size_t>(arg)];
  }
  return out;
}

struct BenchRow {
  std::string method;
  std::size_t n_features = 0;  // 0 for the exact kernel
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double seconds = 0.0;
};

/// Pooled labelled sources against the target, as one TCA instance.
struct TcaInstance {
  Matrix x;  // sources then target, columns are samples
  std::vector<int> source_labels;
  std::vector<int> target_labels;
  LabelVector ell;
  double sigma = 0.0;
  double gamma = 0.0;
};

inline TcaInstance tca_instance(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto domains = load_domains(cfg, seed);
  const std::size_t k = domains.size() - 1;
  const Index p = domains.front().features.dim();
  Index n_s = 0;
  for (std::size_t i = 0; i < k; ++i) {
    require_shape(domains[i].features.dim() == p, "tca_instance: domains differ in feature dimension");
    n_s += domains[i].samples();
  }
  require_shape(domains[k].features.dim() == p, "tca_instance: domains differ in feature dimension");
  const Index n_t = domains[k].samples();
  TcaInstance inst;
  inst.x.resize(p, n_s + n_t);
  Index col = 0;
  for (std::size_t i = 0; i < k; ++i) {
    inst.x.middleCols(col, domains[i].samples()) = domains[i].features.data;
    col += domains[i].samples();
    inst.source_labels.insert(inst.source_labels.end(), domains[i].labels.begin(), domains[i].labels.end());
  }
  inst.x.rightCols(n_t) = domains[k].features.data;
  inst.target_labels = domains[k].evaluation_labels();
  inst.ell = label_vector(static_cast<std::size_t>(n_s), static_cast<std::size_t>(n_t));
  inst.sigma = cfg.sigma > 0.0 ? cfg.sigma : median_bandwidth(inst.x, 256, seed);
  inst.gamma = cfg.gamma ? *cfg.gamma : default_gamma(inst.ell.n_source, inst.ell.n_target);
  return inst;
}

namespace detail {

inline double tca_accuracy(const TcaInstance& inst, const Matrix& aligned) {
  if (inst.target_labels.empty()) return 0.0;
  const auto n_s = static_cast<Index>(inst.ell.n_source);
  const auto pred = nearest_neighbour(aligned.leftCols(n_s), inst.source_labels, aligned.rightCols(aligned.cols() - n_s));
  return accuracy(pred, inst.target_labels);
}

template <class Fn>
double timed(Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline std::filesystem::path prepare_output(const std::string& dir) {
  std::filesystem::path out(dir);
  std::filesystem::create_directories(out);
  return out;
}

}  // namespace detail

/// Vanilla TCA on the exact kernel against RF-TCA over the N grid. Accuracy
/// is 1-nearest-neighbour on the aligned features.
inline std::vector<BenchRow> run_rftca_bench(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<BenchRow> rows;
  for (std::uint64_t seed : cfg.seeds) {
    const TcaInstance inst = tca_instance(cfg, seed);
    TcaConfig tcfg;
    tcfg.gamma = inst.gamma;
    tcfg.m = cfg.m;
    if (cfg.bench.vanilla) {
      BenchRow row{"tca", 0, seed};
      TcaSolution sol;
      row.seconds = detail::timed([&] {
        const Matrix k = gaussian_kernel(inst.x, inst.sigma);
        sol = vanilla_tca(k, inst.ell, tcfg);
      });
      row.accuracy = detail::tca_accuracy(inst, sol.aligned_features);
      rows.push_back(row);
    }
    for (std::size_t n_feat : cfg.bench.n_features) {
      BenchRow row{"rf-tca", n_feat, seed};
      TcaConfig rcfg = tcfg;
      rcfg.variant = TcaVariant::random_features;
      rcfg.m = std::min<std::size_t>(cfg.m, 2 * n_feat);
      TcaSolution sol;
      row.seconds = detail::timed([&] {
        const auto proj = make_projection({inst.sigma, n_feat, cfg.kernel_seed.value_or(seed)}, inst.x.rows());
        sol = rf_tca(rff_map(inst.x, proj), inst.ell, rcfg);
      });
      row.accuracy = detail::tca_accuracy(inst, sol.aligned_features);
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "method,N,seed,accuracy,seconds\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.n_features << ',' << r.seed << ',' << detail::format_double(r.accuracy) << ','
       << detail::format_double(r.seconds) << '\n';
  }
}

struct FedRunSummary {
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double initial_mmd = 0.0;  // first round with a nonzero alignment loss
  double final_mmd = 0.0;
  std::size_t flagged_rounds = 0;
  std::size_t volume_sent = 0;
  std::size_t volume_delivered = 0;
};

inline FedRunSummary summarize(std::uint64_t seed, const ProtocolResult& res) {
  FedRunSummary s;
  s.seed = seed;
  s.final_accuracy = res.final_accuracy;
  s.flagged_rounds = res.flagged_rounds;
  for (const auto& m : res.metrics) {
    if (s.initial_mmd == 0.0 && m.mmd_loss > 0.0) s.initial_mmd = m.mmd_loss;
    s.volume_sent += m.volume_sent;
    s.volume_delivered += m.volume_delivered;
  }
  if (!res.metrics.empty()) s.final_mmd = res.metrics.back().mmd_loss;
  return s;
}

/// Runs the federated protocol once per seed and writes, per seed,
/// metrics_<seed>.jsonl and ledger_<seed>.csv, plus summary.csv.
inline std::vector<FedRunSummary> cmd_fed_run(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto out = detail::prepare_output(cfg.output);
  std::vector<FedRunSummary> summaries;
  for (std::uint64_t seed : cfg.seeds) {
    const auto domains = load_domains(cfg, seed);
    const ProtocolConfig pcfg = cfg.protocol_for(seed, domains.front().features.dim());
    const ProtocolResult res = run_protocol(domains, pcfg);
    save_metrics(res.metrics, (out / ("metrics_" + std::to_string(seed) + ".jsonl")).string());
    std::ofstream ledger(out / ("ledger_" + std::to_string(seed) + ".csv"), std::ios::binary | std::ios::trunc);
    res.ledger.write_csv(ledger);
    summaries.push_back(summarize(seed, res));
  }
  std::ofstream os(out / "summary.csv", std::ios::binary | std::ios::trunc);
  os << "seed,final_accuracy,initial_mmd,final_mmd,flagged_rounds,volume_sent,volume_delivered\n";
  for (const auto& s : summaries) {
    os << s.seed << ',' << detail::format_double(s.final_accuracy) << ',' << detail::format_double(s.initial_mmd) << ','
       << detail::format_double(s.final_mmd) << ',' << s.flagged_rounds << ',' << s.volume_sent << ','
       << s.volume_delivered << '\n';
  }
  if (!os) throw InvalidInputError("fed-run: cannot write " + (out / "summary.csv").string());
  return summaries;
}

/// Measured FedRF volume of one non-boundary round with every source present
/// and a lossless network.
inline std::size_t measured_round_volume(std::size_t k, std::size_t n, std::size_t n_feat, std::size_t m,
                                         std::uint64_t seed) {
  SynthSpec spec;
  spec.sources = k;
  spec.samples_per_domain = n;
  spec.seed = seed;
  const auto domains = generate_synthetic(spec);
  ProtocolConfig p = ExperimentConfig::default_protocol();
  p.rounds = 1;
  p.classifier_interval = 2;
  p.participation = Participation::full;
  p.n_features = n_feat;
  p.m = m;
  p.feature_dim = static_cast<Index>(spec.dim);
  p.eval_every = 1;
  p.seed = seed;
  return run_protocol(domains, p).ledger.round_volume(1);
}

inline std::vector<ComplexityRow> cmd_comm_table(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<ComplexityRow> rows;
  for (std::size_t k : cfg.comm.clients)
    for (std::size_t n : cfg.comm.samples)
      for (std::size_t n_feat : cfg.comm.n_features)
        for (std::size_t m : cfg.comm.m) {
          ComplexityRow row = analytic_complexity(k, n, n_feat, m, cfg.comm.ciphertext);
          if (cfg.comm.measure) {
            row.fedrf_measured = static_cast<double>(measured_round_volume(k, n, n_feat, m, cfg.seeds.front()));
          }
          rows.push_back(row);
        }
  return rows;
}

inline void write_comm_csv(std::ostream& os, const std::vector<ComplexityRow>& rows) {
  os << "K,n,N,m,P,fada,fedka,fda,fedrf_analytic,fedrf_measured\n";
  for (const auto& r : rows) {
    os << r.clients << ',' << r.samples << ',' << r.features << ',' << r.m << ',' << r.ciphertext << ','
       << detail::format_double(r.fada) << ',' << detail::format_double(r.fedka) << ',' << detail::format_double(r.fda)
       << ',' << detail::format_double(r.fedrf_analytic) << ',' << detail::format_double(r.fedrf_measured) << '\n';
  }
}

struct ValidationReport {
  Json resolved;
  double sigma = 0.0;
  double gamma = 0.0;
  double eigen_gap = 0.0;      // relative, of the kernel's top m+1 eigenvalues
  GammaInterval interval;      // where gamma changes the solution
  RegularizationBounds bounds;
  std::vector<std::string> hints;
  std::vector<std::string> warnings;
};

inline constexpr Index kValidateMaxSamples = 400;

/// Checks the config and inspects the first seed's instance on at most
/// kValidateMaxSamples columns, without training.
inline ValidationReport cmd_validate(const ExperimentConfig& cfg) {
  cfg.validate();
  ValidationReport rep;
  rep.resolved = to_json(cfg);
  const std::uint64_t seed = cfg.seeds.front();
  TcaInstance inst = tca_instance(cfg, seed);
  rep.sigma = inst.sigma;
  rep.gamma = inst.gamma;

  // Evenly strided subsample that keeps both domains.
  const auto n_s = static_cast<Index>(inst.ell.n_source), n_t = static_cast<Index>(inst.ell.n_target);
  const Index keep_s = std::min(n_s, kValidateMaxSamples / 2), keep_t = std::min(n_t, kValidateMaxSamples / 2);
  Matrix x(inst.x.rows(), keep_s + keep_t);
  for (Index j = 0; j < keep_s; ++j) x.col(j) = inst.x.col(j * n_s / keep_s);
  for (Index j = 0; j < keep_t; ++j) x.col(keep_s + j) = inst.x.col(n_s + j * n_t / keep_t);
  const LabelVector ell = label_vector(static_cast<std::size_t>(keep_s), static_cast<std::size_t>(keep_t));
  const Matrix k = gaussian_kernel(x, inst.sigma);

  const auto n = x.cols();
  if (static_cast<Index>(cfg.m) + 1 > n) {
    rep.warnings.push_back("tca.m = " + std::to_string(cfg.m) + " leaves no eigen-gap to measure on " +
                           std::to_string(n) + " samples");
  } else {
    const Vector eig = Eigen::SelfAdjointEigenSolver<Matrix>(k, Eigen::EigenvaluesOnly).eigenvalues().reverse();
    rep.eigen_gap = eigen_gap(eig, cfg.m, eig(0));
    if (rep.eigen_gap < 1e-8) {
      rep.warnings.push_back("relative eigen-gap " + detail::format_double(rep.eigen_gap) +
                             " is tiny: the top-m subspace is ill-determined, consider a different m");
    }
  }
  rep.interval = sensitive_gamma_interval(k, ell);
  rep.bounds = regularization_bounds(k, ell, rep.gamma);
  if (rep.gamma < rep.interval.low) {
    rep.hints.push_back("gamma " + detail::format_double(rep.gamma) + " is below the sensitive interval [" +
                        detail::format_double(rep.interval.low) + ", " + detail::format_double(rep.interval.high) +
                        "]: the MMD term dominates and smaller gamma changes little");
  } else if (rep.gamma > rep.interval.high) {
    rep.hints.push_back("gamma " + detail::format_double(rep.gamma) + " is above the sensitive interval [" +
                        detail::format_double(rep.interval.low) + ", " + detail::format_double(rep.interval.high) +
                        "]: the regulariser dominates and the alignment is nearly ignored");
  }
  if (cfg.protocol.classifier_mode == ClassifierMode::interval && cfg.protocol.classifier_interval > cfg.protocol.rounds) {
    rep.warnings.push_back("protocol.classifier_interval exceeds protocol.rounds: classifiers are never aggregated; "
                           "set classifier_mode to hard_vote");
  }
  return rep;
}

inline void write_validation(std::ostream& os, const ValidationReport& rep) {
  os << rep.resolved.dump(2) << '\n';
  os << "sigma: " << detail::format_double(rep.sigma) << '\n';
  os << "gamma: " << detail::format_double(rep.gamma) << '\n';
  os << "eigen_gap: " << detail::format_double(rep.eigen_gap) << '\n';
  os << "gamma_interval: [" << detail::format_double(rep.interval.low) << ", " << detail::format_double(rep.interval.high)
     << "]\n";
  os << "regularization_bounds: [" << detail::format_double(rep.bounds.lower) << ", "
     << detail::format_double(rep.bounds.upper) << "], value " << detail::format_double(rep.bounds.value) << '\n';
  for (const auto& h : rep.hints) os << "hint: " << h << '\n';
  for (const auto& w : rep.warnings) os << "warning: " << w << '\n';
  os << "warnings: " << rep.warnings.size() << '\n';
}

}  // namespace fedrf
