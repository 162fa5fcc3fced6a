#pragma once

// Orchestration: JSON configuration, dataset/model preparation, dynamic
// request scripts served from the embedding store, the noise baseline and
// report serialization.

#include "lego/calibration.hpp"
#include "lego/cf.hpp"
#include "lego/combination.hpp"
#include "lego/data.hpp"
#include "lego/evaluation.hpp"
#include "lego/store.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>

namespace lego {

using nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kScriptSchemaVersion = 1;
inline constexpr const char* kStoreDirEnv = "LEGO_STORE_DIR";

struct DatasetConfig {
  DatasetTag format = DatasetTag::ml100k;
  std::string ratings;
  std::string users;
  int min_interactions = 5;
};

struct Config {
  DatasetConfig dataset;
  CFTrainConfig cf;
  std::string cf_checkpoint;  // loaded if present, written after training otherwise
  CalibrationConfig calibration;
  CombinationConfig combination;
  AttackProtocol attack;
  MIProtocol mi_protocol = objective_protocol();  // bound-check scoring
  int rec_k = 10;
  int parallelism = 1;
  std::uint64_t dp_seed = 99;
  std::string output_dir = "lego-out";
  std::string store_dir;  // defaults to <output_dir>/store

  [[nodiscard]] std::string effective_store_dir() const {
    if (const char* env = std::getenv(kStoreDirEnv); env && *env) return env;
    return store_dir.empty() ? (std::filesystem::path(output_dir) / "store").string() : store_dir;
  }

  void validate() const {
    cf.validate();
    calibration.validate();
    combination.validate();
    if (dataset.min_interactions < 1) throw Error("config: dataset.min_interactions must be >= 1");
    if (rec_k < 1) throw Error("config: evaluation.k must be >= 1");
    if (parallelism < 1) throw Error("config: parallelism must be >= 1");
    if (attack.folds < 2) throw Error("config: attack.folds must be >= 2");
    if (attack.attacker.hidden < 1 || attack.attacker.learning_rate <= 0.0 || attack.attacker.max_epochs < 1 ||
        attack.attacker.batch_size < 1 || attack.attacker.l2 < 0.0 || attack.attacker.patience < 1)
      throw Error("config: invalid attack settings");
    if (mi_protocol.fit_steps < 0 || mi_protocol.batch_size < 2 || mi_protocol.passes < 1 || mi_protocol.folds < 1 ||
        mi_protocol.variational.hidden < 1 || mi_protocol.variational.learning_rate <= 0.0)
      throw Error("config: invalid mi_protocol settings");
    if (output_dir.empty()) throw Error("config: output_dir must not be empty");
  }
};

namespace detail {

// Reads optional members into existing defaults and rejects unknown keys.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error("config: '" + where_ + "' must be an object");
  }
  template <typename T>
  ObjectReader& opt(const char* key, T& field) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) {
      try {
        field = it->get<T>();
      } catch (const json::exception& e) {
        throw Error("config: '" + where_ + "." + key + "' has the wrong type: " + e.what());
      }
    }
    return *this;
  }
  [[nodiscard]] const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw Error("config: unknown key '" + where_ + "." + key + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline std::string resolve_path(const std::string& path, const std::filesystem::path& base) {
  if (path.empty() || base.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (base / path).lexically_normal().string();
}

inline std::string dataset_tag_name(DatasetTag tag) { return tag == DatasetTag::ml1m ? "ml-1m" : "ml-100k"; }

}  // namespace detail

// Relative paths are resolved against `base` (the config file's directory
// when loaded from disk).
inline Config config_from_json(const json& j, const std::filesystem::path& base = {}) {
  Config c;
  detail::ObjectReader top(j, "config");
  int version = 0;
  top.opt("schema_version", version);
  if (version != kConfigSchemaVersion)
    throw Error("config: schema_version must be " + std::to_string(kConfigSchemaVersion));

  if (const json* d = top.child("dataset")) {
    detail::ObjectReader r(*d, "dataset");
    std::string format = detail::dataset_tag_name(c.dataset.format);
    r.opt("format", format).opt("ratings", c.dataset.ratings).opt("users", c.dataset.users);
    r.opt("min_interactions", c.dataset.min_interactions).finish();
    c.dataset.format = parse_dataset_tag(format);
  }
  if (const json* d = top.child("cf")) {
    detail::ObjectReader r(*d, "cf");
    r.opt("dim", c.cf.dim).opt("epochs", c.cf.epochs).opt("learning_rate", c.cf.learning_rate).opt("l2", c.cf.l2);
    r.opt("negatives", c.cf.negatives).opt("batch_size", c.cf.batch_size).opt("init_std", c.cf.init_std);
    r.opt("seed", c.cf.seed).opt("checkpoint", c.cf_checkpoint).finish();
  }
  if (const json* d = top.child("calibration")) {
    auto& k = c.calibration;
    detail::ObjectReader r(*d, "calibration");
    r.opt("eps_ratio", k.eps_ratio).opt("iterations", k.iterations).opt("batch_size", k.batch_size);
    r.opt("learning_rate", k.learning_rate).opt("inner_steps", k.inner_steps);
    r.opt("variational_hidden", k.variational.hidden).opt("variational_learning_rate", k.variational.learning_rate);
    r.opt("seed", k.seed).opt("plateau_stop", k.plateau_stop).opt("plateau_window", k.plateau_window);
    r.opt("plateau_tolerance", k.plateau_tolerance).finish();
  }
  if (const json* d = top.child("combination")) {
    auto& k = c.combination;
    detail::ObjectReader r(*d, "combination");
    r.opt("iterations", k.iterations).opt("batch_size", k.batch_size).opt("learning_rate", k.learning_rate);
    r.opt("inner_steps", k.inner_steps).opt("variational_hidden", k.variational.hidden);
    r.opt("variational_learning_rate", k.variational.learning_rate).opt("seed", k.seed).finish();
  }
  if (const json* d = top.child("attack")) {
    auto& a = c.attack.attacker;
    detail::ObjectReader r(*d, "attack");
    r.opt("folds", c.attack.folds).opt("fold_seed", c.attack.fold_seed).opt("hidden", a.hidden).opt("l2", a.l2);
    r.opt("learning_rate", a.learning_rate).opt("max_epochs", a.max_epochs).opt("batch_size", a.batch_size);
    r.opt("tolerance", a.tolerance).opt("patience", a.patience).opt("seed", a.seed).finish();
  }
  if (const json* d = top.child("mi_protocol")) {
    auto& m = c.mi_protocol;
    detail::ObjectReader r(*d, "mi_protocol");
    r.opt("fit_steps", m.fit_steps).opt("batch_size", m.batch_size).opt("passes", m.passes).opt("folds", m.folds);
    r.opt("hidden", m.variational.hidden).opt("learning_rate", m.variational.learning_rate).finish();
  }
  top.opt("rec_k", c.rec_k).opt("parallelism", c.parallelism).opt("dp_seed", c.dp_seed);
  top.opt("output_dir", c.output_dir).opt("store_dir", c.store_dir);
  top.finish();

  c.dataset.ratings = detail::resolve_path(c.dataset.ratings, base);
  c.dataset.users = detail::resolve_path(c.dataset.users, base);
  c.cf_checkpoint = detail::resolve_path(c.cf_checkpoint, base);
  c.output_dir = detail::resolve_path(c.output_dir, base);
  c.store_dir = detail::resolve_path(c.store_dir, base);
  c.validate();
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path + ": invalid JSON: " + e.what());
  }
}

inline Config load_config(const std::string& path) {
  return config_from_json(read_json_file(path), std::filesystem::path(path).parent_path());
}

inline json config_to_json(const Config& c) {
  const auto& k = c.calibration;
  const auto& m = c.combination;
  const auto& a = c.attack.attacker;
  return {
      {"schema_version", kConfigSchemaVersion},
      {"dataset",
       {{"format", detail::dataset_tag_name(c.dataset.format)},
        {"ratings", c.dataset.ratings},
        {"users", c.dataset.users},
        {"min_interactions", c.dataset.min_interactions}}},
      {"cf",
       {{"dim", c.cf.dim}, {"epochs", c.cf.epochs}, {"learning_rate", c.cf.learning_rate}, {"l2", c.cf.l2},
        {"negatives", c.cf.negatives}, {"batch_size", c.cf.batch_size}, {"init_std", c.cf.init_std},
        {"seed", c.cf.seed}, {"checkpoint", c.cf_checkpoint}}},
      {"calibration",
       {{"eps_ratio", k.eps_ratio}, {"iterations", k.iterations}, {"batch_size", k.batch_size},
        {"learning_rate", k.learning_rate}, {"inner_steps", k.inner_steps},
        {"variational_hidden", k.variational.hidden}, {"variational_learning_rate", k.variational.learning_rate},
        {"seed", k.seed}, {"plateau_stop", k.plateau_stop}, {"plateau_window", k.plateau_window},
        {"plateau_tolerance", k.plateau_tolerance}}},
      {"combination",
       {{"iterations", m.iterations}, {"batch_size", m.batch_size}, {"learning_rate", m.learning_rate},
        {"inner_steps", m.inner_steps}, {"variational_hidden", m.variational.hidden},
        {"variational_learning_rate", m.variational.learning_rate}, {"seed", m.seed}}},
      {"attack",
       {{"folds", c.attack.folds}, {"fold_seed", c.attack.fold_seed}, {"hidden", a.hidden}, {"l2", a.l2},
        {"learning_rate", a.learning_rate}, {"max_epochs", a.max_epochs}, {"batch_size", a.batch_size},
        {"tolerance", a.tolerance}, {"patience", a.patience}, {"seed", a.seed}}},
      {"mi_protocol",
       {{"fit_steps", c.mi_protocol.fit_steps}, {"batch_size", c.mi_protocol.batch_size},
        {"passes", c.mi_protocol.passes}, {"folds", c.mi_protocol.folds}, {"hidden", c.mi_protocol.variational.hidden},
        {"learning_rate", c.mi_protocol.variational.learning_rate}}},
      {"rec_k", c.rec_k},
      {"parallelism", c.parallelism},
      {"dp_seed", c.dp_seed},
      {"output_dir", c.output_dir},
      {"store_dir", c.store_dir},
  };
}

// ---------------------------------------------------------------- scripts

struct ScenarioScript {
  std::vector<std::vector<std::string>> requests;

  void validate(const AttributeTable& table) const {
    if (requests.empty()) throw Error("scenario: no requests");
    for (std::size_t r = 0; r < requests.size(); ++r) {
      if (requests[r].empty()) throw Error("scenario: request " + std::to_string(r) + " is empty");
      std::set<std::string> seen;
      for (const auto& name : requests[r]) {
        if (!table.contains(name)) throw Error("scenario: unknown attribute '" + name + "'");
        if (!seen.insert(name).second) throw Error("scenario: attribute '" + name + "' repeated in a request");
      }
    }
  }
};

inline ScenarioScript script_from_json(const json& j) {
  if (!j.is_object() || j.value("schema_version", 0) != kScriptSchemaVersion)
    throw Error("scenario: schema_version must be " + std::to_string(kScriptSchemaVersion));
  if (!j.contains("requests") || !j["requests"].is_array()) throw Error("scenario: 'requests' must be an array");
  ScenarioScript s;
  for (const auto& r : j["requests"]) {
    try {
      s.requests.push_back(r.get<std::vector<std::string>>());
    } catch (const json::exception&) {
      throw Error("scenario: each request must be an array of attribute names");
    }
  }
  return s;
}

inline ScenarioScript load_script(const std::string& path) { return script_from_json(read_json_file(path)); }

inline std::vector<std::string> split_names(std::string_view list) {
  std::vector<std::string> out;
  for (const auto& part : detail::split(std::string(list), ","))
    if (!part.empty()) out.push_back(part);
  return out;
}

// --------------------------------------------------------------- pipeline

struct Pipeline {
  InteractionDataset dataset;
  AttributeTable attributes;
  CFModel model;

  [[nodiscard]] std::vector<AttributeLabels> labels(const std::vector<std::string>& names) const {
    std::vector<AttributeLabels> out;
    for (const auto& name : names) {
      const auto& a = attributes.at(name);
      out.push_back({a.name, a.cardinality, a.labels});
    }
    return out;
  }

  [[nodiscard]] std::vector<std::string> attribute_names() const { return attributes.names(); }

  // Hash of (U_0, every attribute's labels): the source part of a store key.
  [[nodiscard]] std::string source_hash() const {
    Fnv1a h;
    h.update(model.users);
    for (const auto& a : attributes.attributes) h.update(a.name).update(a.labels);
    return hex64(h.digest());
  }
};

inline std::pair<InteractionDataset, AttributeTable> load_data(const DatasetConfig& config) {
  if (config.ratings.empty() || config.users.empty()) throw Error("config: dataset.ratings and dataset.users required");
  const RawRatings raw = load_dataset(config.format, config.ratings, config.users);
  InteractionDataset ds = preprocess_split(raw, config.min_interactions);
  AttributeTable table = bin_attributes(raw, config.format).select_users(ds.user_ids);
  return {std::move(ds), std::move(table)};
}

// Loads the checkpoint when it exists and matches the dataset, trains (and
// writes the checkpoint) otherwise.
inline Pipeline prepare_pipeline(const Config& config, bool* trained = nullptr) {
  auto [ds, table] = load_data(config.dataset);
  Pipeline p{std::move(ds), std::move(table), {}};
  if (trained) *trained = false;
  if (!config.cf_checkpoint.empty() && std::filesystem::exists(config.cf_checkpoint)) {
    p.model = load_cf(config.cf_checkpoint);
    if (p.model.users.rows() == p.dataset.num_users && p.model.items.rows() == p.dataset.num_items) return p;
    warn("checkpoint " + config.cf_checkpoint + " does not match the dataset, retraining");
  }
  p.model = train_cf(p.dataset, config.cf);
  if (trained) *trained = true;
  if (!config.cf_checkpoint.empty()) {
    const auto parent = std::filesystem::path(config.cf_checkpoint).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    save_cf(p.model, config.cf_checkpoint);
  }
  return p;
}

// ---------------------------------------------------------------- scenario

struct PhaseTimings {
  double calibration = 0.0;
  double store_load = 0.0;
  double combination = 0.0;
  double evaluation = 0.0;

  // The work needed to produce U*, excluding metric evaluation.
  [[nodiscard]] double unlearning() const { return calibration + store_load + combination; }
  [[nodiscard]] double total() const { return unlearning() + evaluation; }
};

struct RequestReport {
  int index = 0;
  std::vector<std::string> attributes;
  CombinationWeights weights;
  std::vector<double> attribute_mi;
  std::optional<AttackReport> attack;
  std::optional<RecReport> rec;
  int calibrations_executed = 0;
  int cache_hits = 0;
  std::vector<std::string> recalibrated_after_corruption;
  PhaseTimings timings;
  Matrix embedding;  // U*, not serialized
};

struct ScenarioOptions {
  bool evaluate = true;
  bool write_traces = false;  // calibration CSV traces under output_dir/traces
};

inline void write_calibration_trace_csv(const std::vector<CalibrationTraceRow>& trace, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.precision(10);
  out << "iteration,mi,nll,distance\n";
  for (const auto& r : trace) out << r.iteration << ',' << r.mi << ',' << r.nll << ',' << r.distance << '\n';
}

inline void write_combination_trace_csv(const std::vector<CombinationTraceRow>& trace, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.precision(10);
  const std::size_t k = trace.empty() ? 0 : trace.front().alpha.size();
  out << "iteration,mi_sum";
  for (std::size_t i = 0; i < k; ++i) out << ",alpha" << i;
  out << '\n';
  for (const auto& r : trace) {
    out << r.iteration << ',' << r.mi_sum;
    for (double a : r.alpha) out << ',' << a;
    out << '\n';
  }
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

// Serves one request: cached calibrations are read from the store,
// missing or corrupted ones are calibrated in parallel and persisted, then
// the weights are optimized and (optionally) the result evaluated.
inline RequestReport run_request(const Config& config, const Pipeline& pipeline, EmbeddingStore& store,
                                 const std::vector<std::string>& request, int index,
                                 const ScenarioOptions& options = {}) {
  using clock = std::chrono::steady_clock;
  RequestReport report;
  report.index = index;
  report.attributes = request;
  const auto attrs = pipeline.labels(request);
  const std::string source = pipeline.source_hash();
  const std::string config_hash = hex64(config.calibration.hash());

  std::map<std::string, Matrix> calibrated;
  std::vector<AttributeLabels> missing;
  auto start = clock::now();
  for (const auto& a : attrs) {
    const StoreKey key{source, a.name, config_hash};
    if (!store.contains(key)) {
      missing.push_back(a);
      continue;
    }
    try {
      calibrated[a.name] = store.get(key);
      ++report.cache_hits;
    } catch (const ChecksumError& e) {
      warn(std::string(e.what()) + "; recalibrating '" + a.name + "'");
      store.erase(key);
      report.recalibrated_after_corruption.push_back(a.name);
      missing.push_back(a);
    }
  }
  report.timings.store_load = detail::seconds_since(start);

  start = clock::now();
  if (!missing.empty()) {
    const auto results = calibrate_many(pipeline.model.users, missing, config.calibration, config.parallelism);
    for (const auto& a : missing) {
      const auto& r = results.at(a.name);
      store.put({source, a.name, config_hash}, r.embedding);
      calibrated[a.name] = r.embedding;
      ++report.calibrations_executed;
      if (options.write_traces) {
        const auto dir = std::filesystem::path(config.output_dir) / "traces";
        std::filesystem::create_directories(dir);
        write_calibration_trace_csv(r.trace, (dir / ("calibration_" + a.name + ".csv")).string());
      }
    }
  }
  report.timings.calibration = detail::seconds_since(start);

  start = clock::now();
  std::vector<Matrix> ordered;
  for (const auto& a : attrs) ordered.push_back(calibrated.at(a.name));
  CombinationResult combined = ordered.size() == 1 ? average_combination(ordered)
                                                   : optimize_weights(ordered, attrs, config.combination);
  report.timings.combination = detail::seconds_since(start);
  report.weights = combined.weights;
  report.attribute_mi = combined.attribute_mi;
  report.embedding = std::move(combined.embedding);

  if (options.evaluate) {
    start = clock::now();
    report.attack = attack_metrics(report.embedding, pipeline.labels(pipeline.attribute_names()), config.attack);
    report.rec = hr_ndcg_at_k(report.embedding, pipeline.model.items, pipeline.dataset, config.rec_k);
    report.timings.evaluation = detail::seconds_since(start);
  }
  if (report.calibrations_executed + report.cache_hits != static_cast<int>(request.size()))
    throw Error("scenario: counter mismatch for request " + std::to_string(index));
  return report;
}

inline std::vector<RequestReport> run_scenario(const Config& config, const Pipeline& pipeline, EmbeddingStore& store,
                                               const ScenarioScript& script, const ScenarioOptions& options = {}) {
  script.validate(pipeline.attributes);
  std::vector<RequestReport> reports;
  for (std::size_t r = 0; r < script.requests.size(); ++r)
    reports.push_back(run_request(config, pipeline, store, script.requests[r], static_cast<int>(r), options));
  return reports;
}

// ---------------------------------------------------------------- baseline

inline Matrix dp_baseline(const Matrix& u0, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw Error("dp_baseline: sigma must be non-negative");
  if (sigma == 0.0) return u0;
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  Matrix out = u0;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += noise(rng);
  return out;
}

struct DpPoint {
  double sigma = 0.0;
  AttackReport attack;
  RecReport rec;
};

inline std::vector<DpPoint> dp_sweep(const Config& config, const Pipeline& pipeline, const std::vector<double>& sigmas) {
  std::vector<DpPoint> out;
  const auto attrs = pipeline.labels(pipeline.attribute_names());
  for (double s : sigmas) {
    const Matrix noisy = dp_baseline(pipeline.model.users, s, config.dp_seed);
    out.push_back({s, attack_metrics(noisy, attrs, config.attack),
                   hr_ndcg_at_k(noisy, pipeline.model.items, pipeline.dataset, config.rec_k)});
  }
  return out;
}

// ----------------------------------------------------------------- reports

inline json to_json(const AttackReport& r) {
  json attrs = json::array();
  for (const auto& a : r.attributes)
    attrs.push_back({{"attribute", a.attribute}, {"bacc_mean", a.bacc_mean}, {"bacc_std", a.bacc_std},
                     {"f1_mean", a.f1_mean}, {"f1_std", a.f1_std}, {"fold_bacc", a.fold_bacc},
                     {"fold_f1", a.fold_f1}});
  return {{"attributes", attrs}, {"bacc_mean", r.bacc_mean}, {"f1_mean", r.f1_mean}};
}

inline json to_json(const RecReport& r) {
  return {{"k", r.k}, {"hr", r.hr}, {"ndcg", r.ndcg}, {"users_evaluated", r.users_evaluated}};
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline json to_json(const CombinationResult& r) {
  return {{"attributes", r.attributes}, {"alpha", to_std(r.weights.alpha)}, {"attribute_mi", r.attribute_mi},
          {"iterations", r.trace.size()}};
}

inline json to_json(const CalibrationResult& r) {
  json j = {{"attribute", r.attribute}, {"epsilon", r.epsilon}, {"config_hash", hex64(r.config_hash)},
            {"iterations", r.trace.size()}};
  if (!r.trace.empty()) {
    j["final_mi"] = r.trace.back().mi;
    j["final_distance"] = r.trace.back().distance;
  }
  return j;
}

inline json to_json(const BoundCheckReport& r) {
  return {{"P1", r.p1},
          {"P2", r.p2},
          {"gap", r.gap},
          {"relative_gap", std::max(r.p1, r.p2) > 0.0 ? std::abs(r.gap) / std::max(r.p1, r.p2) : 0.0},
          {"epsilon", r.epsilon},
          {"k", r.k},
          {"C", r.c_frobenius},
          {"P1_per_attribute", r.p1_per_attribute},
          {"P2_per_attribute", r.p2_per_attribute},
          {"P1_alpha", r.p1_alpha},
          {"P2_alpha", r.p2_alpha},
          {"note", r.note}};
}

inline json to_json(const PhaseTimings& t) {
  return {{"calibration", t.calibration}, {"store_load", t.store_load}, {"combination", t.combination},
          {"evaluation", t.evaluation}, {"unlearning", t.unlearning()}, {"total", t.total()}};
}

inline json to_json(const RequestReport& r) {
  json j = {{"request", r.index},
            {"attributes", r.attributes},
            {"alpha", to_std(r.weights.alpha)},
            {"attribute_mi", r.attribute_mi},
            {"calibrations_executed", r.calibrations_executed},
            {"cache_hits", r.cache_hits},
            {"recalibrated_after_corruption", r.recalibrated_after_corruption},
            {"timings_seconds", to_json(r.timings)}};
  if (r.attack) j["attack"] = to_json(*r.attack);
  if (r.rec) j["rec"] = to_json(*r.rec);
  return j;
}

inline json to_json(const DpPoint& p) {
  return {{"sigma", p.sigma}, {"attack", to_json(p.attack)}, {"rec", to_json(p.rec)}};
}

inline void write_json_file(const json& j, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace lego
