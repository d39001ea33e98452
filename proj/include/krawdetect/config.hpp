#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "krawdetect/harness.hpp"

namespace krawdetect {

// Output settings for the evaluate subcommand.
struct OutputConfig {
  std::string dir = ".";
  std::string basename = "report";
  std::vector<std::string> formats{"csv", "json"};
};

// Everything a CLI run needs apart from the key, which never enters a config.
struct CliConfig {
  ExperimentConfig experiment;
  OutputConfig output;
};

inline nlohmann::ordered_json config_to_json(const CliConfig& c) {
  using ojson = nlohmann::ordered_json;
  const auto& e = c.experiment;
  const auto& d = e.detector;
  ojson j;
  j["data"] = {{"images", e.data.images},
               {"labels", e.data.labels},
               {"surrogate_count", e.data.surrogate_count},
               {"clean_count", e.data.clean_count},
               {"synthetic_seed", e.data.synthetic_seed}};
  j["grid"] = {{"px", d.px_candidates},
               {"py", d.py_candidates},
               {"max_order", d.max_order},
               {"blocking_prob", d.blocking_prob},
               {"min_retained_configs", d.min_retained_configs}};
  j["bands"] = d.num_bands;
  j["integration_mode"] = to_string(d.mode);
  j["enhancement"] = {{"enabled", d.enhance},
                      {"keep_fraction", d.enhancement.keep_fraction},
                      {"weighting", d.enhancement.weighting}};
  j["svm"] = {{"lambda", d.svm.lambda}, {"epochs", d.svm.epochs}, {"schedule", d.svm.schedule}};
  auto list = ojson::array();
  for (const auto& a : e.attacks)
    list.push_back({{"name", a.label()},
                    {"kind", to_string(a.spec.kind)},
                    {"epsilon", a.spec.epsilon},
                    {"steps", a.spec.steps},
                    {"alpha", a.spec.alpha},
                    {"rand_init", a.spec.rand_init},
                    {"quantize", a.spec.quantize}});
  auto harmless = ojson::array();
  for (const auto& h : e.harmless) harmless.push_back({{"kind", to_string(h.kind)}, {"magnitude", h.magnitude}});
  j["attacks"] = {{"list", list},
                  {"harmless", harmless},
                  {"surrogate",
                   {{"epochs", e.surrogate.epochs},
                    {"lr", e.surrogate.lr},
                    {"init_scale", e.surrogate.init_scale},
                    {"subsample", e.surrogate.subsample}}}};
  j["experiment"] = {{"protocol", to_string(e.protocol)},
                     {"split_fraction", e.split_fraction},
                     {"num_attacks", e.num_attacks},
                     {"workers", e.workers},
                     {"timestamp", e.timestamp}};
  j["seeds"] = {{"experiment", e.seed},
                {"surrogate", e.surrogate.seed},
                {"second_surrogate", e.second_surrogate_seed},
                {"svm_shuffle", d.svm.shuffle_seed}};
  j["output"] = {{"dir", c.output.dir}, {"basename", c.output.basename}, {"formats", c.output.formats}};
  return j;
}

namespace detail {

// Rejects keys that the defaults do not have. Arrays are taken whole, and
// array items are checked against `item_schema` when one is known.
inline void check_keys(const nlohmann::ordered_json& given, const nlohmann::ordered_json& schema, const std::string& path) {
  if (!given.is_object()) return;
  if (!schema.is_object()) throw ConfigError("'" + path + "' must not be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    check_keys(it.value(), schema.at(it.key()), key);
  }
}

inline void check_items(const nlohmann::ordered_json& arr, const nlohmann::ordered_json& item_schema,
                        const std::string& path) {
  if (!arr.is_array()) throw ConfigError("'" + path + "' must be an array");
  for (const auto& item : arr) {
    if (!item.is_object()) throw ConfigError("'" + path + "' entries must be objects");
    check_keys(item, item_schema, path + "[]");
  }
}

inline AttackSpec attack_from_json(const nlohmann::ordered_json& j) {
  AttackSpec a;
  a.spec.kind = parse_attack_kind(j.value("kind", std::string("fgsm")));
  a.spec.epsilon = j.value("epsilon", 0.2);
  a.spec.steps = j.value("steps", a.spec.kind == AttackKind::Fgsm ? 1 : 10);
  a.spec.alpha = j.value("alpha", a.spec.kind == AttackKind::Fgsm ? a.spec.epsilon : a.spec.epsilon / 4.0);
  a.spec.rand_init = j.value("rand_init", a.spec.kind == AttackKind::Pgd);
  a.spec.quantize = j.value("quantize", false);
  a.name = j.value("name", std::string(to_string(a.spec.kind)));
  return a;
}

}  // namespace detail

// Parses a config document. Missing keys keep their defaults; unknown keys
// are rejected.
inline CliConfig config_from_json(const nlohmann::ordered_json& given) {
  if (!given.is_object()) throw ConfigError("config must be a JSON object");
  const CliConfig defaults;
  auto schema = config_to_json(defaults);
  detail::check_keys(given, schema, "");
  const nlohmann::ordered_json attack_item = {{"name", ""}, {"kind", ""},     {"epsilon", 0},
                                              {"steps", 0}, {"alpha", 0},     {"rand_init", false},
                                              {"quantize", false}};
  const nlohmann::ordered_json harmless_item = {{"kind", ""}, {"magnitude", 0}};
  if (given.contains("attacks")) {
    const auto& a = given.at("attacks");
    if (a.contains("list")) detail::check_items(a.at("list"), attack_item, "attacks.list");
    if (a.contains("harmless")) detail::check_items(a.at("harmless"), harmless_item, "attacks.harmless");
  }

  auto j = schema;
  j.merge_patch(given);

  CliConfig c;
  auto& e = c.experiment;
  auto& d = e.detector;
  try {
    const auto& data = j.at("data");
    e.data.images = data.at("images").get<std::string>();
    e.data.labels = data.at("labels").get<std::string>();
    e.data.surrogate_count = data.at("surrogate_count").get<std::size_t>();
    e.data.clean_count = data.at("clean_count").get<std::size_t>();
    e.data.synthetic_seed = data.at("synthetic_seed").get<std::uint64_t>();

    const auto& grid = j.at("grid");
    d.px_candidates = grid.at("px").get<std::vector<double>>();
    d.py_candidates = grid.at("py").get<std::vector<double>>();
    d.max_order = grid.at("max_order").get<int>();
    d.blocking_prob = grid.at("blocking_prob").get<double>();
    d.min_retained_configs = grid.at("min_retained_configs").get<std::size_t>();
    d.num_bands = j.at("bands").get<std::size_t>();
    d.mode = parse_integration_mode(j.at("integration_mode").get<std::string>());

    const auto& en = j.at("enhancement");
    d.enhance = en.at("enabled").get<bool>();
    d.enhancement.keep_fraction = en.at("keep_fraction").get<double>();
    d.enhancement.weighting = en.at("weighting").get<bool>();

    const auto& svm = j.at("svm");
    d.svm.lambda = svm.at("lambda").get<double>();
    d.svm.epochs = svm.at("epochs").get<int>();
    d.svm.schedule = svm.at("schedule").get<std::string>();

    const auto& at = j.at("attacks");
    e.attacks.clear();
    for (const auto& item : at.at("list")) e.attacks.push_back(detail::attack_from_json(item));
    e.harmless.clear();
    for (const auto& item : at.at("harmless"))
      e.harmless.push_back({parse_harmless_kind(item.value("kind", std::string("gaussian"))), item.value("magnitude", 0.05)});
    const auto& sur = at.at("surrogate");
    e.surrogate.epochs = sur.at("epochs").get<int>();
    e.surrogate.lr = sur.at("lr").get<double>();
    e.surrogate.init_scale = sur.at("init_scale").get<double>();
    e.surrogate.subsample = sur.at("subsample").get<double>();

    const auto& ex = j.at("experiment");
    e.protocol = parse_protocol(ex.at("protocol").get<std::string>());
    e.split_fraction = ex.at("split_fraction").get<double>();
    e.num_attacks = ex.at("num_attacks").get<std::size_t>();
    e.workers = ex.at("workers").get<std::size_t>();
    e.timestamp = ex.at("timestamp").get<std::string>();

    const auto& seeds = j.at("seeds");
    e.seed = seeds.at("experiment").get<std::uint64_t>();
    e.surrogate.seed = seeds.at("surrogate").get<std::uint64_t>();
    e.second_surrogate_seed = seeds.at("second_surrogate").get<std::uint64_t>();
    d.svm.shuffle_seed = seeds.at("svm_shuffle").get<std::uint64_t>();

    const auto& out = j.at("output");
    c.output.dir = out.at("dir").get<std::string>();
    c.output.basename = out.at("basename").get<std::string>();
    c.output.formats = out.at("formats").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad config value: ") + ex.what());
  }
  for (const auto& f : c.output.formats)
    if (f != "csv" && f != "json") throw ConfigError("unknown output format '" + f + "'");
  e.validate();
  d.svm.validate();
  d.grid(2, 2).validate();
  if (d.num_bands < 1) throw ConfigError("bands must be >= 1");
  return c;
}

inline CliConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j);
}

}  // namespace krawdetect
