#pragma once

// JSON run configuration shared by every CLI command.
//
// Parsing is strict: unknown keys and wrong types are reported with the JSON
// path of the offending field (e.g. "models[3].standard_layers"), and syntax
// errors with line and column.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "foldattn/attention.hpp"
#include "foldattn/cost_model.hpp"
#include "foldattn/folding.hpp"
#include "foldattn/streaming.hpp"
#include "foldattn/toy.hpp"

namespace foldattn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layer dimensions shared by every model of a grid. Without embed_dim and
/// ffn_dim the grid is "abstract": sizes come from the fitted size model only.
struct ModelDescription {
  std::optional<std::size_t> embed_dim;
  std::optional<std::size_t> ffn_dim;
  std::size_t heads = 8;
  std::size_t folding_factor = 2;
  std::size_t feature_dim = 80;
  std::size_t chunk_size = 8;
  std::size_t left_context = 24;
  Activation activation = Activation::relu;
  bool use_bias = true;
  bool use_norm = true;
  double token_period_ms = 40.0;

  bool concrete() const { return embed_dim.has_value() && ffn_dim.has_value(); }

  bool operator==(const ModelDescription&) const = default;
};

struct ReferenceValues {
  std::optional<double> size_m;
  std::optional<double> gops;
  std::optional<double> power_mw;

  bool operator==(const ReferenceValues&) const = default;
};

struct ModelEntry {
  std::string id;
  std::size_t folding_layers = 0;
  std::size_t standard_layers = 0;
  ReferenceValues reference;

  bool operator==(const ModelEntry&) const = default;
};

/// Explicit coefficients; used instead of fitting when present.
struct CostCoefficients {
  double base_m = 0.0;
  double per_layer_m = 0.0;
  double gops_per_unit = 0.0;
  double base_gops = 0.0;
  double power_a = 0.0;
  double power_b = 0.0;

  bool operator==(const CostCoefficients&) const = default;
};

struct CostSettings {
  std::vector<std::string> size_anchors;
  std::vector<std::string> gops_anchors;
  std::vector<std::string> power_anchors;
  std::size_t bytes_per_param = 4;
  std::optional<CostCoefficients> coefficients;

  bool operator==(const CostSettings&) const = default;
};

struct TrainSettings {
  ToyTask task;
  std::size_t steps = 500;
  double lr = 0.1;
  std::uint64_t seed = 1;
  double target_accuracy = 0.95;

  bool operator==(const TrainSettings&) const = default;
};

using ModelPair = std::pair<std::string, std::string>;  // (candidate, baseline)

struct RunConfig {
  std::string name;
  ModelDescription model;
  std::vector<ModelEntry> models;
  CostSettings cost;
  std::vector<ModelPair> pairs;
  std::optional<TrainSettings> train;
  std::uint64_t seed = 1;
  std::string format = "text";

  const ModelEntry& find_model(const std::string& id) const {
    for (const auto& m : models)
      if (m.id == id) return m;
    throw ConfigError("unknown model id '" + id + "'");
  }

  bool operator==(const RunConfig&) const = default;
};

/// Layer spec of the grid's standard layer. Requires concrete dimensions.
inline LayerSpec standard_layer_spec(const ModelDescription& m) {
  if (!m.concrete()) throw ConfigError("model: embed_dim and ffn_dim are required here");
  return LayerSpec{LayerKind::standard, *m.embed_dim, *m.ffn_dim, m.heads, 1,
                   m.activation,        m.use_bias,  m.use_norm};
}

inline EncoderSpec encoder_spec(const ModelDescription& m, const ModelEntry& entry) {
  return make_encoder_spec(standard_layer_spec(m), entry.folding_layers, entry.standard_layers,
                           m.folding_factor, m.feature_dim, m.chunk_size, m.left_context);
}

// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

class JsonReader {
 public:
  JsonReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  /// Rejects keys that were never looked up.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) fail(field(it.key()), "unknown field");
  }

  JsonReader(const JsonReader&) = delete;
  JsonReader& operator=(const JsonReader&) = delete;

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) fail(field(key), "missing required field");
    return obj_.at(key);
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  std::uint64_t uint(const std::string& key) { return as_uint(raw(key), field(key)); }
  std::uint64_t uint(const std::string& key, std::uint64_t fallback) {
    return has(key) ? uint(key) : fallback;
  }
  double number(const std::string& key) { return as_number(raw(key), field(key)); }
  double number(const std::string& key, double fallback) {
    return has(key) ? number(key) : fallback;
  }
  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_boolean()) fail(field(key), "expected true or false");
    return v.get<bool>();
  }
  std::string string(const std::string& key) { return as_string(raw(key), field(key)); }
  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : fallback;
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigError(where + ": " + what);
  }

  static std::uint64_t as_uint(const json& v, const std::string& where) {
    if (!v.is_number_unsigned()) fail(where, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  static double as_number(const json& v, const std::string& where) {
    if (!v.is_number()) fail(where, "expected a number");
    return v.get<double>();
  }
  static std::string as_string(const json& v, const std::string& where) {
    if (!v.is_string()) fail(where, "expected a string");
    return v.get<std::string>();
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::vector<std::string> read_ids(JsonReader& r, const std::string& key) {
  std::vector<std::string> out;
  if (!r.has(key)) return out;
  const auto& arr = r.raw(key);
  if (!arr.is_array()) JsonReader::fail(r.field(key), "expected an array of model ids");
  for (std::size_t i = 0; i < arr.size(); ++i)
    out.push_back(JsonReader::as_string(arr[i], r.field(key) + "[" + std::to_string(i) + "]"));
  return out;
}

inline Activation parse_activation(const std::string& s, const std::string& where) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  JsonReader::fail(where, "expected \"relu\" or \"gelu\", got \"" + s + "\"");
}

inline ModelDescription read_model(const json& j, const std::string& path) {
  JsonReader r(j, path);
  ModelDescription m;
  if (r.has("embed_dim")) m.embed_dim = r.uint("embed_dim");
  if (r.has("ffn_dim")) m.ffn_dim = r.uint("ffn_dim");
  m.heads = r.uint("heads", m.heads);
  m.folding_factor = r.uint("folding_factor", m.folding_factor);
  m.feature_dim = r.uint("feature_dim", m.feature_dim);
  m.chunk_size = r.uint("chunk_size", m.chunk_size);
  m.left_context = r.uint("left_context", m.left_context);
  if (r.has("activation"))
    m.activation = parse_activation(r.string("activation"), r.field("activation"));
  m.use_bias = r.boolean("use_bias", m.use_bias);
  m.use_norm = r.boolean("use_norm", m.use_norm);
  m.token_period_ms = r.number("token_period_ms", m.token_period_ms);
  if (m.heads == 0) JsonReader::fail(r.field("heads"), "must be >= 1");
  if (m.folding_factor == 0) JsonReader::fail(r.field("folding_factor"), "must be >= 1");
  if (m.chunk_size == 0) JsonReader::fail(r.field("chunk_size"), "must be >= 1");
  if (m.feature_dim == 0) JsonReader::fail(r.field("feature_dim"), "must be >= 1");
  if (m.embed_dim.has_value() != m.ffn_dim.has_value())
    JsonReader::fail(path, "embed_dim and ffn_dim must be given together");
  r.finish();
  return m;
}

inline ModelEntry read_entry(const json& j, const std::string& path) {
  JsonReader r(j, path);
  ModelEntry e;
  e.id = r.string("id");
  e.folding_layers = r.uint("folding_layers", 0);
  e.standard_layers = r.uint("standard_layers", 0);
  if (r.has("reference")) {
    JsonReader ref(r.raw("reference"), r.field("reference"));
    if (ref.has("size_m")) e.reference.size_m = ref.number("size_m");
    if (ref.has("gops")) e.reference.gops = ref.number("gops");
    if (ref.has("power_mw")) e.reference.power_mw = ref.number("power_mw");
    ref.finish();
  }
  r.finish();
  return e;
}

inline CostSettings read_cost(const json& j, const std::string& path) {
  JsonReader r(j, path);
  CostSettings c;
  c.size_anchors = read_ids(r, "size_anchors");
  c.gops_anchors = read_ids(r, "gops_anchors");
  c.power_anchors = read_ids(r, "power_anchors");
  c.bytes_per_param = r.uint("bytes_per_param", c.bytes_per_param);
  if (c.bytes_per_param != 1 && c.bytes_per_param != 4)
    JsonReader::fail(r.field("bytes_per_param"), "must be 1 or 4");
  if (r.has("coefficients")) {
    JsonReader k(r.raw("coefficients"), r.field("coefficients"));
    CostCoefficients cc;
    cc.base_m = k.number("base_m");
    cc.per_layer_m = k.number("per_layer_m");
    cc.gops_per_unit = k.number("gops_per_unit");
    cc.base_gops = k.number("base_gops");
    cc.power_a = k.number("power_a");
    cc.power_b = k.number("power_b");
    k.finish();
    c.coefficients = cc;
  }
  r.finish();
  return c;
}

inline TrainSettings read_train(const json& j, const std::string& path) {
  JsonReader r(j, path);
  TrainSettings t;
  if (r.has("task")) {
    JsonReader k(r.raw("task"), r.field("task"));
    t.task.seed = k.uint("seed", t.task.seed);
    t.task.num_classes = k.uint("num_classes", t.task.num_classes);
    t.task.sequence_length = k.uint("sequence_length", t.task.sequence_length);
    t.task.feature_dim = k.uint("feature_dim", t.task.feature_dim);
    t.task.noise = k.number("noise", t.task.noise);
    t.task.train_sequences = k.uint("train_sequences", t.task.train_sequences);
    t.task.eval_sequences = k.uint("eval_sequences", t.task.eval_sequences);
    if (t.task.num_classes < 2) JsonReader::fail(k.field("num_classes"), "must be >= 2");
    if (t.task.sequence_length == 0 || t.task.train_sequences == 0 || t.task.eval_sequences == 0)
      JsonReader::fail(r.field("task"), "sequence and split sizes must be >= 1");
    k.finish();
  }
  t.steps = r.uint("steps", t.steps);
  t.lr = r.number("lr", t.lr);
  t.seed = r.uint("seed", t.seed);
  t.target_accuracy = r.number("target_accuracy", t.target_accuracy);
  r.finish();
  return t;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::JsonReader;
  RunConfig cfg;
  JsonReader r(j, "");
  cfg.name = r.string("name", "");
  if (r.has("model")) cfg.model = detail::read_model(r.raw("model"), "model");
  if (r.has("models")) {
    const auto& arr = r.raw("models");
    if (!arr.is_array()) JsonReader::fail("models", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i)
      cfg.models.push_back(detail::read_entry(arr[i], "models[" + std::to_string(i) + "]"));
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < cfg.models.size(); ++i)
    if (!ids.insert(cfg.models[i].id).second)
      JsonReader::fail("models[" + std::to_string(i) + "].id",
                       "duplicate id '" + cfg.models[i].id + "'");
  if (r.has("cost")) cfg.cost = detail::read_cost(r.raw("cost"), "cost");
  if (r.has("pairs")) {
    const auto& arr = r.raw("pairs");
    if (!arr.is_array()) JsonReader::fail("pairs", "expected an array of [candidate, baseline]");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = "pairs[" + std::to_string(i) + "]";
      if (!arr[i].is_array() || arr[i].size() != 2)
        JsonReader::fail(where, "expected [candidate, baseline]");
      cfg.pairs.emplace_back(JsonReader::as_string(arr[i][0], where + "[0]"),
                             JsonReader::as_string(arr[i][1], where + "[1]"));
    }
  }
  if (r.has("train")) cfg.train = detail::read_train(r.raw("train"), "train");
  cfg.seed = r.uint("seed", cfg.seed);
  cfg.format = r.string("format", cfg.format);
  if (cfg.format != "text" && cfg.format != "csv")
    JsonReader::fail("format", "expected \"text\" or \"csv\"");
  r.finish();
  return cfg;
}

/// Parses JSON text; syntax errors report line and column.
inline nlohmann::json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": JSON syntax error");
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunConfig load_config(const std::string& path) {
  try {
    return parse_config(parse_json_text(read_text_file(path), path));
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path, 0) == 0) throw;
    throw ConfigError(path + ": " + msg);
  }
}

inline nlohmann::json to_json(const RunConfig& cfg) {
  using nlohmann::json;
  json j;
  j["name"] = cfg.name;
  json m;
  const auto& md = cfg.model;
  if (md.embed_dim) m["embed_dim"] = *md.embed_dim;
  if (md.ffn_dim) m["ffn_dim"] = *md.ffn_dim;
  m["heads"] = md.heads;
  m["folding_factor"] = md.folding_factor;
  m["feature_dim"] = md.feature_dim;
  m["chunk_size"] = md.chunk_size;
  m["left_context"] = md.left_context;
  m["activation"] = std::string(to_string(md.activation));
  m["use_bias"] = md.use_bias;
  m["use_norm"] = md.use_norm;
  m["token_period_ms"] = md.token_period_ms;
  j["model"] = m;
  json models = json::array();
  for (const auto& e : cfg.models) {
    json je{{"id", e.id}, {"folding_layers", e.folding_layers},
            {"standard_layers", e.standard_layers}};
    json ref = json::object();
    if (e.reference.size_m) ref["size_m"] = *e.reference.size_m;
    if (e.reference.gops) ref["gops"] = *e.reference.gops;
    if (e.reference.power_mw) ref["power_mw"] = *e.reference.power_mw;
    if (!ref.empty()) je["reference"] = ref;
    models.push_back(je);
  }
  j["models"] = models;
  json cost{{"size_anchors", cfg.cost.size_anchors},
            {"gops_anchors", cfg.cost.gops_anchors},
            {"power_anchors", cfg.cost.power_anchors},
            {"bytes_per_param", cfg.cost.bytes_per_param}};
  if (cfg.cost.coefficients) {
    const auto& c = *cfg.cost.coefficients;
    cost["coefficients"] = {{"base_m", c.base_m},           {"per_layer_m", c.per_layer_m},
                            {"gops_per_unit", c.gops_per_unit}, {"base_gops", c.base_gops},
                            {"power_a", c.power_a},         {"power_b", c.power_b}};
  }
  j["cost"] = cost;
  json pairs = json::array();
  for (const auto& [a, b] : cfg.pairs) pairs.push_back({a, b});
  j["pairs"] = pairs;
  if (cfg.train) {
    const auto& t = *cfg.train;
    j["train"] = {{"task",
                   {{"seed", t.task.seed},
                    {"num_classes", t.task.num_classes},
                    {"sequence_length", t.task.sequence_length},
                    {"feature_dim", t.task.feature_dim},
                    {"noise", t.task.noise},
                    {"train_sequences", t.task.train_sequences},
                    {"eval_sequences", t.task.eval_sequences}}},
                  {"steps", t.steps},
                  {"lr", t.lr},
                  {"seed", t.seed},
                  {"target_accuracy", t.target_accuracy}};
  }
  j["seed"] = cfg.seed;
  j["format"] = cfg.format;
  return j;
}

inline std::string serialize_config(const RunConfig& cfg) { return to_json(cfg).dump(2); }

}  // namespace foldattn
