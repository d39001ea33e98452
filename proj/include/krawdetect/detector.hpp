#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "krawdetect/features.hpp"
#include "krawdetect/keyed_selection.hpp"
#include "krawdetect/parallel.hpp"
#include "krawdetect/svm.hpp"

namespace krawdetect {

inline constexpr int kModelFormatVersion = 1;

// Everything needed to re-run detection: plan, band layout, enhancement
// statistics and the SVM head. The key itself is never stored.
struct DetectorModel {
  int format_version = kModelFormatVersion;
  std::uint64_t key_fingerprint = 0;
  SelectionPlan plan;
  BandPartition partition;
  IntegrationMode mode = IntegrationMode::Magnitude;
  EnhancementState enhancement;
  SvmModel svm;

  void validate() const {
    if (key_fingerprint != plan.key_fingerprint) throw ConsistencyError("model fingerprint does not match its plan");
    if (enhancement.input_dim() != plan.retained_configs.size() * partition.num_bands)
      throw ConsistencyError("enhancement dimension does not match plan and partition");
    if (svm.weights.size() != enhancement.output_dim())
      throw ConsistencyError("svm dimension does not match the enhanced feature dimension");
  }

  friend bool operator==(const DetectorModel&, const DetectorModel&) = default;
};

struct DetectorConfig {
  double blocking_prob = 0.5;
  std::size_t min_retained_configs = 4;
  int max_order = 48;
  std::vector<double> px_candidates{0.25, 0.375, 0.5, 0.625, 0.75};
  std::vector<double> py_candidates{0.25, 0.375, 0.5, 0.625, 0.75};
  std::size_t num_bands = 8;
  IntegrationMode mode = IntegrationMode::Magnitude;
  bool enhance = true;
  EnhancementOptions enhancement;
  TrainConfig svm;

  CandidateGrid grid(std::size_t width, std::size_t height) const {
    CandidateGrid g;
    for (double px : px_candidates)
      for (double py : py_candidates) g.spatial_candidates.push_back({px, py});
    const int mx = std::min(static_cast<int>(width) - 1, max_order);
    const int my = std::min(static_cast<int>(height) - 1, max_order);
    g.order_candidates = full_order_set(mx, my);
    g.blocking_prob = blocking_prob;
    g.min_retained_configs = min_retained_configs;
    return g;
  }
};

// Bound model ready for inference.
class Detector {
 public:
  explicit Detector(DetectorModel model)
      : model_(std::move(model)), extractor_(model_.plan, model_.partition, model_.mode) {
    model_.validate();
  }

  const DetectorModel& model() const noexcept { return model_; }
  const FeatureExtractor& extractor() const noexcept { return extractor_; }

  FeatureVector features(const Image& img) const { return extractor_(img, &model_.enhancement); }
  Prediction operator()(const Image& img) const { return predict(model_.svm, features(img).values); }

 private:
  DetectorModel model_;
  FeatureExtractor extractor_;
};

// Full training pipeline: plan from key, raw features, enhancement, SVM.
inline DetectorModel train_detector(const std::vector<Image>& images, const std::vector<int>& labels,
                                    const DetectorKey& key, const DetectorConfig& cfg, std::size_t workers = 1) {
  if (images.empty()) throw DataError("no training images");
  if (images.size() != labels.size()) throw ShapeError("image and label counts differ");
  const std::size_t w = images.front().width;
  const std::size_t h = images.front().height;

  DetectorModel model;
  model.plan = sample_plan(key, cfg.grid(w, h));
  model.key_fingerprint = model.plan.key_fingerprint;
  model.partition = partition_bands(w, h, cfg.num_bands);
  model.mode = cfg.mode;

  const FeatureExtractor extractor(model.plan, model.partition, model.mode);
  const auto raw = parallel_map<FeatureVector>(images.size(), workers, [&](std::size_t i) { return extractor.raw(images[i]); });

  if (cfg.enhance) {
    model.enhancement = fit_enhancement(raw, labels, cfg.enhancement);
  } else {
    // z-score only
    model.enhancement = fit_enhancement(raw, labels, {1.0, false});
  }
  std::vector<std::vector<double>> x(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) x[i] = apply_enhancement(raw[i], model.enhancement).values;
  model.svm = train_svm(x, labels, cfg.svm);
  return model;
}

// ---- persistence ---------------------------------------------------------

namespace detail {

using ojson = nlohmann::ordered_json;

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const ojson& j) {
  if (!j.is_string()) throw FormatError("expected a decimal string");
  const auto s = j.get<std::string>();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError("bad decimal string '" + s + "'");
  return v;
}

inline ojson doubles_to_json(const std::vector<double>& v) {
  auto arr = ojson::array();
  for (double d : v) arr.push_back(format_double(d));
  return arr;
}

inline std::vector<double> doubles_from_json(const ojson& j) {
  if (!j.is_array()) throw FormatError("expected an array of decimal strings");
  std::vector<double> out;
  for (const auto& e : j) out.push_back(parse_double(e));
  return out;
}

}  // namespace detail

inline nlohmann::ordered_json model_to_json(const DetectorModel& m) {
  using detail::format_double;
  using detail::ojson;
  ojson j;
  j["format_version"] = m.format_version;
  j["key_fingerprint"] = to_hex(m.key_fingerprint);

  ojson plan;
  plan["key_fingerprint"] = to_hex(m.plan.key_fingerprint);
  auto configs = ojson::array();
  for (const auto& c : m.plan.retained_configs) configs.push_back({format_double(c.px), format_double(c.py)});
  plan["retained_configs"] = configs;
  auto orders = ojson::array();
  for (const auto& o : m.plan.order_mask) orders.push_back({o.n, o.m});
  plan["order_mask"] = orders;
  j["plan"] = plan;

  j["partition"] = {{"num_bands", m.partition.num_bands}, {"width", m.partition.width}, {"height", m.partition.height}};
  j["mode"] = to_string(m.mode);

  ojson enh;
  enh["weights"] = detail::doubles_to_json(m.enhancement.weights);
  auto keep = ojson::array();
  for (char k : m.enhancement.keep_mask) keep.push_back(k ? 1 : 0);
  enh["keep_mask"] = keep;
  enh["mean"] = detail::doubles_to_json(m.enhancement.mean);
  enh["std"] = detail::doubles_to_json(m.enhancement.stddev);
  j["enhancement"] = enh;

  ojson svm;
  svm["weights"] = detail::doubles_to_json(m.svm.weights);
  svm["bias"] = format_double(m.svm.bias);
  svm["train_config"] = {{"lambda", format_double(m.svm.train_config.lambda)},
                         {"epochs", m.svm.train_config.epochs},
                         {"schedule", m.svm.train_config.schedule},
                         {"shuffle_seed", to_hex(m.svm.train_config.shuffle_seed)}};
  j["svm"] = svm;
  return j;
}

inline DetectorModel model_from_json(const nlohmann::ordered_json& j) {
  try {
    if (!j.is_object() || !j.contains("format_version")) throw FormatError("model document has no format_version");
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw VersionError("model format_version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kModelFormatVersion) + ")");
    DetectorModel m;
    m.format_version = version;
    m.key_fingerprint = parse_hex64(j.at("key_fingerprint").get<std::string>());

    const auto& plan = j.at("plan");
    m.plan.key_fingerprint = parse_hex64(plan.at("key_fingerprint").get<std::string>());
    for (const auto& c : plan.at("retained_configs"))
      m.plan.retained_configs.push_back({detail::parse_double(c.at(0)), detail::parse_double(c.at(1))});
    for (const auto& o : plan.at("order_mask")) m.plan.order_mask.push_back({o.at(0).get<int>(), o.at(1).get<int>()});

    const auto& part = j.at("partition");
    m.partition = partition_bands(part.at("width").get<std::size_t>(), part.at("height").get<std::size_t>(),
                                  part.at("num_bands").get<std::size_t>());
    m.mode = parse_integration_mode(j.at("mode").get<std::string>());

    const auto& enh = j.at("enhancement");
    m.enhancement.weights = detail::doubles_from_json(enh.at("weights"));
    for (const auto& k : enh.at("keep_mask")) m.enhancement.keep_mask.push_back(k.get<int>() ? 1 : 0);
    m.enhancement.mean = detail::doubles_from_json(enh.at("mean"));
    m.enhancement.stddev = detail::doubles_from_json(enh.at("std"));

    const auto& svm = j.at("svm");
    m.svm.weights = detail::doubles_from_json(svm.at("weights"));
    m.svm.bias = detail::parse_double(svm.at("bias"));
    const auto& tc = svm.at("train_config");
    m.svm.train_config.lambda = detail::parse_double(tc.at("lambda"));
    m.svm.train_config.epochs = tc.at("epochs").get<int>();
    m.svm.train_config.schedule = tc.at("schedule").get<std::string>();
    m.svm.train_config.shuffle_seed = parse_hex64(tc.at("shuffle_seed").get<std::string>());
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model document: ") + e.what());
  }
}

inline std::string serialize_model(const DetectorModel& m) { return model_to_json(m).dump(2) + "\n"; }

inline void save_model(const DetectorModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model " + path.string());
  out << serialize_model(m);
  if (!out) throw IoError("write failed for " + path.string());
}

inline DetectorModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model file " + path.string() + " is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

inline DetectorModel persist_roundtrip(const DetectorModel& m, const std::filesystem::path& path) {
  save_model(m, path);
  return load_model(path);
}

// FNV-1a over the serialized model; identifies a trained artifact in reports.
inline std::uint64_t model_fingerprint(const DetectorModel& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize_model(m)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace krawdetect
