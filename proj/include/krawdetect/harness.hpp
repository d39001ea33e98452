#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "krawdetect/attacks.hpp"
#include "krawdetect/detector.hpp"
#include "krawdetect/image_io.hpp"
#include "krawdetect/metrics.hpp"
#include "krawdetect/parallel.hpp"
#include "krawdetect/synthetic_digits.hpp"

namespace krawdetect {

enum class Protocol { Benchmark, CrossingAttack, Challenging, Harmless, CrossingSurrogate };

inline const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::Benchmark: return "benchmark";
    case Protocol::CrossingAttack: return "crossing_attack";
    case Protocol::Challenging: return "challenging";
    case Protocol::Harmless: return "harmless";
    case Protocol::CrossingSurrogate: return "crossing_surrogate";
  }
  return "?";
}

inline Protocol parse_protocol(const std::string& s) {
  for (auto p : {Protocol::Benchmark, Protocol::CrossingAttack, Protocol::Challenging, Protocol::Harmless,
                 Protocol::CrossingSurrogate})
    if (s == to_string(p)) return p;
  throw ConfigError("unknown protocol '" + s + "'");
}

struct AttackSpec {
  std::string name;  // report label; defaults to the attack kind
  PerturbationSpec spec;

  std::string label() const { return name.empty() ? to_string(spec.kind) : name; }
};

struct HarmlessSpec {
  HarmlessKind kind = HarmlessKind::Gaussian;
  double magnitude = 0.05;
};

struct DataConfig {
  std::string images;  // IDX pair; empty selects the synthetic digit generator
  std::string labels;
  std::size_t surrogate_count = 2000;  // examples used to fit the surrogate
  std::size_t clean_count = 2000;      // clean pool size
  std::uint64_t synthetic_seed = 1;
};

struct ExperimentConfig {
  Protocol protocol = Protocol::Benchmark;
  DataConfig data;
  std::vector<AttackSpec> attacks{{"fgsm", PerturbationSpec::fgsm(0.2)}};
  std::vector<HarmlessSpec> harmless{{HarmlessKind::Gaussian, 0.05}, {HarmlessKind::SaltPepper, 0.01},
                                     {HarmlessKind::Resample, 2.0}};
  double split_fraction = 0.5;
  std::size_t num_attacks = 0;  // N for the challenging protocol; 0 means all listed attacks
  // A small seeded init keeps perturbations on always-dark border pixels.
  SurrogateTrainConfig surrogate{100, 0.5, 0, 0.01, 1.0};
  std::uint64_t second_surrogate_seed = 2;  // crossing_surrogate
  DetectorConfig detector;
  DetectorKey key;
  std::uint64_t seed = 0;  // split and attack randomness
  std::size_t workers = 1;
  std::string timestamp;  // echoed verbatim; empty keeps reports reproducible

  void validate() const {
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split_fraction must lie in (0,1)");
    if (attacks.empty()) throw ConfigError("attack list is empty");
    if (protocol == Protocol::Challenging && (num_attacks > attacks.size()))
      throw ConfigError("challenging protocol needs N <= number of listed attacks");
    if (protocol == Protocol::Harmless && harmless.empty()) throw ConfigError("harmless protocol needs harmless kinds");
    for (const auto& a : attacks) a.spec.validate();
  }
};

struct ReportRow {
  std::string protocol;
  std::string train_attack;
  std::string test_attack;
  ConfusionCounts counts;
  std::uint64_t seed = 0;
  std::uint64_t model_fingerprint = 0;

  Metrics metrics() const { return compute_metrics(counts); }
  std::size_t n_test() const { return counts.total(); }

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct Report {
  std::vector<ReportRow> rows;
  nlohmann::ordered_json config;  // effective configuration echo
  std::string timestamp;
  std::uint64_t key_fingerprint = 0;

  friend bool operator==(const Report&, const Report&) = default;
};

inline constexpr const char* kReportFooter = "ratios with a zero denominator are reported as 0";

// ---- report emission -----------------------------------------------------

enum class ReportFormat { Csv, Json };

namespace detail {

inline std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace detail

inline std::string report_csv(const Report& r) {
  std::ostringstream os;
  os << "protocol,train_attack,test_attack,recall,precision,f1,accuracy,n_test,seed,model_fingerprint\n";
  for (const auto& row : r.rows) {
    const auto m = row.metrics();
    os << row.protocol << ',' << row.train_attack << ',' << row.test_attack << ',' << detail::fixed4(m.recall) << ','
       << detail::fixed4(m.precision) << ',' << detail::fixed4(m.f1) << ',' << detail::fixed4(m.accuracy) << ','
       << row.n_test() << ',' << row.seed << ',' << to_hex(row.model_fingerprint) << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json report_to_json(const Report& r) {
  nlohmann::ordered_json j;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    const auto m = row.metrics();
    nlohmann::ordered_json jr;
    jr["protocol"] = row.protocol;
    jr["train_attack"] = row.train_attack;
    jr["test_attack"] = row.test_attack;
    jr["recall"] = detail::fixed4(m.recall);
    jr["precision"] = detail::fixed4(m.precision);
    jr["f1"] = detail::fixed4(m.f1);
    jr["accuracy"] = detail::fixed4(m.accuracy);
    jr["n_test"] = row.n_test();
    jr["seed"] = row.seed;
    jr["model_fingerprint"] = to_hex(row.model_fingerprint);
    jr["counts"] = {{"tp", row.counts.tp}, {"fp", row.counts.fp}, {"tn", row.counts.tn}, {"fn", row.counts.fn}};
    rows.push_back(jr);
  }
  j["rows"] = rows;
  j["key_fingerprint"] = to_hex(r.key_fingerprint);
  if (!r.timestamp.empty()) j["timestamp"] = r.timestamp;
  j["config"] = r.config;
  j["footer"] = kReportFooter;
  return j;
}

inline Report report_from_json(const nlohmann::ordered_json& j) {
  try {
    Report r;
    for (const auto& jr : j.at("rows")) {
      ReportRow row;
      row.protocol = jr.at("protocol").get<std::string>();
      row.train_attack = jr.at("train_attack").get<std::string>();
      row.test_attack = jr.at("test_attack").get<std::string>();
      const auto& c = jr.at("counts");
      row.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                    c.at("fn").get<std::size_t>()};
      row.seed = jr.at("seed").get<std::uint64_t>();
      row.model_fingerprint = parse_hex64(jr.at("model_fingerprint").get<std::string>());
      r.rows.push_back(std::move(row));
    }
    r.key_fingerprint = parse_hex64(j.at("key_fingerprint").get<std::string>());
    if (j.contains("timestamp")) r.timestamp = j.at("timestamp").get<std::string>();
    r.config = j.at("config");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

inline std::string report_text(const Report& r, ReportFormat format) {
  return format == ReportFormat::Csv ? report_csv(r) : report_to_json(r).dump(2) + "\n";
}

inline void emit_report(const Report& r, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report " + path.string());
  out << report_text(r, format);
  if (!out) throw IoError("write failed for " + path.string());
}

// ---- experiment machinery ------------------------------------------------

// Clean pool, its split, and per-image seeds. Train and test indices never
// overlap; an adversarial example always sits in its source image's pool.
struct ExperimentData {
  Dataset surrogate_set;
  Dataset clean;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
};

inline ExperimentData prepare_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  const auto& dc = cfg.data;
  if (dc.images.empty()) {
    d.surrogate_set = make_synthetic_digits(dc.surrogate_count, dc.synthetic_seed ^ 0x5u, cfg.workers);
    d.clean = make_synthetic_digits(dc.clean_count, dc.synthetic_seed, cfg.workers);
  } else {
    auto all = load_idx_pair(dc.images, dc.labels);
    all.validate();
    if (all.size() < dc.surrogate_count + 2)
      throw DataError("dataset too small for the requested surrogate split");
    d.surrogate_set.name = all.name + "/surrogate";
    d.clean.name = all.name + "/pool";
    d.surrogate_set.num_classes = d.clean.num_classes = all.num_classes;
    const std::size_t pool = std::min(dc.clean_count, all.size() - dc.surrogate_count);
    for (std::size_t i = 0; i < dc.surrogate_count; ++i) d.surrogate_set.examples.push_back(all.examples[i]);
    for (std::size_t i = 0; i < pool; ++i) d.clean.examples.push_back(all.examples[dc.surrogate_count + i]);
  }
  const std::size_t n = d.clean.size();
  const auto n_train = static_cast<std::size_t>(std::floor(cfg.split_fraction * static_cast<double>(n)));
  if (n_train < 1 || n_train >= n) throw DataError("not enough clean examples for a train/test split");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  SplitMix64 rng(cfg.seed);
  shuffle_in_place(perm, rng);
  d.train_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  d.test_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  return d;
}

inline std::uint64_t image_seed(std::uint64_t base, std::size_t index) { return base ^ static_cast<std::uint64_t>(index); }

// Adversarial versions of every pool image under one attack.
inline std::vector<Image> attack_pool(const SurrogateModel& model, const Dataset& pool, const PerturbationSpec& spec,
                                      std::uint64_t seed, std::size_t workers) {
  return parallel_map<Image>(pool.size(), workers, [&](std::size_t i) {
    auto s = spec;
    s.seed = image_seed(seed, i);
    const auto& ex = pool.examples[i];
    const auto delta = attack(model, ex.image, ex.label, s);
    return ex.image + delta;
  });
}

inline std::vector<Image> harmless_pool(const Dataset& pool, const HarmlessSpec& h, std::uint64_t seed, std::size_t workers) {
  return parallel_map<Image>(pool.size(), workers, [&](std::size_t i) {
    return perturb_harmless(pool.examples[i].image, h.kind, h.magnitude, image_seed(seed, i));
  });
}

// A labeled view into raw feature caches.
struct Sample {
  const FeatureVector* raw;
  int label;
};

inline DetectorModel fit_detector_on(const std::vector<Sample>& train, const SelectionPlan& plan,
                                     const BandPartition& partition, const DetectorConfig& cfg) {
  DetectorModel m;
  m.plan = plan;
  m.key_fingerprint = plan.key_fingerprint;
  m.partition = partition;
  m.mode = cfg.mode;
  std::vector<FeatureVector> raw;
  std::vector<int> labels;
  raw.reserve(train.size());
  for (const auto& s : train) {
    raw.push_back(*s.raw);
    labels.push_back(s.label);
  }
  m.enhancement = cfg.enhance ? fit_enhancement(raw, labels, cfg.enhancement) : fit_enhancement(raw, labels, {1.0, false});
  std::vector<std::vector<double>> x(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) x[i] = apply_enhancement(raw[i], m.enhancement).values;
  m.svm = train_svm(x, labels, cfg.svm);
  return m;
}

inline ConfusionCounts evaluate_on(const DetectorModel& m, const std::vector<Sample>& test) {
  ConfusionCounts c;
  for (const auto& s : test) c.add(s.label, predict(m.svm, apply_enhancement(*s.raw, m.enhancement).values).label);
  return c;
}

namespace detail {

inline nlohmann::ordered_json experiment_echo(const ExperimentConfig& cfg);

}  // namespace detail

// Runs one protocol end to end. Every random choice is seeded from the
// config, so the report is identical for any worker count. Trained models
// are appended to `models` (one per report cell group) when given.
inline Report run_experiment(const ExperimentConfig& cfg, std::vector<DetectorModel>* models = nullptr) {
  cfg.validate();
  const auto data = prepare_data(cfg);
  const std::size_t w = data.clean.width(), h = data.clean.height();
  const auto plan = sample_plan(cfg.key, cfg.detector.grid(w, h));
  const auto partition = partition_bands(w, h, cfg.detector.num_bands);
  const FeatureExtractor extractor(plan, partition, cfg.detector.mode);
  auto features_of = [&](const std::vector<Image>& imgs) {
    return parallel_map<FeatureVector>(imgs.size(), cfg.workers, [&](std::size_t i) { return extractor.raw(imgs[i]); });
  };

  std::vector<Image> clean_imgs;
  for (const auto& ex : data.clean.examples) clean_imgs.push_back(ex.image);
  const auto clean_raw = features_of(clean_imgs);

  auto surrogate_cfg = cfg.surrogate;
  const auto surrogate = train_surrogate(data.surrogate_set, surrogate_cfg);
  const std::uint64_t attack_seed = cfg.seed ^ 0xA77AC3ULL;

  std::vector<std::vector<FeatureVector>> adv_raw;
  for (const auto& a : cfg.attacks)
    adv_raw.push_back(features_of(attack_pool(surrogate, data.clean, a.spec, attack_seed, cfg.workers)));

  Report report;
  report.config = detail::experiment_echo(cfg);
  report.timestamp = cfg.timestamp;
  report.key_fingerprint = plan.key_fingerprint;
  const std::string protocol = to_string(cfg.protocol);

  auto paired = [&](const std::vector<std::size_t>& idx, const std::vector<FeatureVector>& adv) {
    std::vector<Sample> out;
    for (std::size_t i : idx) {
      out.push_back({&clean_raw[i], 0});
      out.push_back({&adv[i], 1});
    }
    return out;
  };
  auto fit = [&](const std::vector<Sample>& train) {
    auto m = fit_detector_on(train, plan, partition, cfg.detector);
    if (models) models->push_back(m);
    return m;
  };
  auto row = [&](const std::string& train_name, const std::string& test_name, const DetectorModel& m,
                 const std::vector<Sample>& test) {
    report.rows.push_back({protocol, train_name, test_name, evaluate_on(m, test), cfg.seed, model_fingerprint(m)});
  };

  switch (cfg.protocol) {
    case Protocol::Benchmark:
      for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
        const auto m = fit(paired(data.train_idx, adv_raw[a]));
        row(cfg.attacks[a].label(), cfg.attacks[a].label(), m, paired(data.test_idx, adv_raw[a]));
      }
      break;

    case Protocol::CrossingAttack:
      for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
        const auto m = fit(paired(data.train_idx, adv_raw[a]));
        for (std::size_t b = 0; b < cfg.attacks.size(); ++b)
          row(cfg.attacks[a].label(), cfg.attacks[b].label(), m, paired(data.test_idx, adv_raw[b]));
      }
      break;

    case Protocol::Challenging: {
      const std::size_t n_att = cfg.num_attacks == 0 ? cfg.attacks.size() : cfg.num_attacks;
      // Train half split into N equal chunks, chunk j attacked by attack j.
      std::vector<Sample> train;
      const std::size_t n = data.train_idx.size();
      std::string name;
      for (std::size_t j = 0; j < n_att; ++j) name += (j ? "+" : "") + cfg.attacks[j].label();
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t part = std::min(n_att - 1, k * n_att / n);
        const std::size_t i = data.train_idx[k];
        train.push_back({&clean_raw[i], 0});
        train.push_back({&adv_raw[part][i], 1});
      }
      const auto m = fit(train);
      for (std::size_t j = 0; j < n_att; ++j) row(name, cfg.attacks[j].label(), m, paired(data.test_idx, adv_raw[j]));
      break;
    }

    case Protocol::Harmless: {
      std::vector<std::vector<FeatureVector>> harm_raw;
      for (std::size_t k = 0; k < cfg.harmless.size(); ++k)
        harm_raw.push_back(features_of(harmless_pool(data.clean, cfg.harmless[k], cfg.seed ^ (0x4A24ULL + k), cfg.workers)));
      for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
        auto train = paired(data.train_idx, adv_raw[a]);
        for (const auto& hr : harm_raw)
          for (std::size_t i : data.train_idx) train.push_back({&hr[i], 0});
        const auto m = fit(train);
        auto test = paired(data.test_idx, adv_raw[a]);
        for (const auto& hr : harm_raw)
          for (std::size_t i : data.test_idx) test.push_back({&hr[i], 0});
        row(cfg.attacks[a].label(), cfg.attacks[a].label(), m, test);
        // Harmless kind versus the adversarial test examples.
        for (std::size_t k = 0; k < cfg.harmless.size(); ++k) {
          std::vector<Sample> t;
          for (std::size_t i : data.test_idx) {
            t.push_back({&harm_raw[k][i], 0});
            t.push_back({&adv_raw[a][i], 1});
          }
          row(cfg.attacks[a].label(), std::string("harmless:") + to_string(cfg.harmless[k].kind), m, t);
        }
      }
      break;
    }

    case Protocol::CrossingSurrogate: {
      auto second_cfg = cfg.surrogate;
      second_cfg.seed = cfg.second_surrogate_seed;
      const auto second = train_surrogate(data.surrogate_set, second_cfg);
      for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
        const auto other = features_of(attack_pool(second, data.clean, cfg.attacks[a].spec, attack_seed, cfg.workers));
        const auto m = fit(paired(data.train_idx, adv_raw[a]));
        const std::string s1 = cfg.attacks[a].label() + "@s" + std::to_string(cfg.surrogate.seed);
        const std::string s2 = cfg.attacks[a].label() + "@s" + std::to_string(cfg.second_surrogate_seed);
        row(s1, s1, m, paired(data.test_idx, adv_raw[a]));
        row(s1, s2, m, paired(data.test_idx, other));
      }
      break;
    }
  }
  return report;
}

namespace detail {

inline nlohmann::ordered_json experiment_echo(const ExperimentConfig& cfg) {
  using ojson = nlohmann::ordered_json;
  ojson j;
  j["protocol"] = to_string(cfg.protocol);
  j["data"] = {{"images", cfg.data.images},
               {"labels", cfg.data.labels},
               {"surrogate_count", cfg.data.surrogate_count},
               {"clean_count", cfg.data.clean_count},
               {"synthetic_seed", cfg.data.synthetic_seed}};
  auto attacks = ojson::array();
  for (const auto& a : cfg.attacks)
    attacks.push_back({{"name", a.label()},
                       {"kind", to_string(a.spec.kind)},
                       {"epsilon", a.spec.epsilon},
                       {"steps", a.spec.steps},
                       {"alpha", a.spec.alpha},
                       {"rand_init", a.spec.rand_init},
                       {"quantize", a.spec.quantize}});
  j["attacks"] = attacks;
  auto harmless = ojson::array();
  for (const auto& hs : cfg.harmless) harmless.push_back({{"kind", to_string(hs.kind)}, {"magnitude", hs.magnitude}});
  j["harmless"] = harmless;
  j["split_fraction"] = cfg.split_fraction;
  j["num_attacks"] = cfg.num_attacks;
  j["surrogate"] = {{"epochs", cfg.surrogate.epochs},
                    {"lr", cfg.surrogate.lr},
                    {"seed", cfg.surrogate.seed},
                    {"init_scale", cfg.surrogate.init_scale},
                    {"subsample", cfg.surrogate.subsample},
                    {"second_seed", cfg.second_surrogate_seed}};
  const auto& d = cfg.detector;
  j["detector"] = {{"px", d.px_candidates},
                   {"py", d.py_candidates},
                   {"max_order", d.max_order},
                   {"blocking_prob", d.blocking_prob},
                   {"min_retained_configs", d.min_retained_configs},
                   {"bands", d.num_bands},
                   {"integration_mode", to_string(d.mode)},
                   {"enhance", d.enhance},
                   {"keep_fraction", d.enhancement.keep_fraction},
                   {"weighting", d.enhancement.weighting},
                   {"svm_lambda", d.svm.lambda},
                   {"svm_epochs", d.svm.epochs},
                   {"svm_schedule", d.svm.schedule},
                   {"svm_shuffle_seed", d.svm.shuffle_seed}};
  j["seed"] = cfg.seed;
  return j;
}

}  // namespace detail

// ---- defense-aware helpers ------------------------------------------------

// Coefficients the trained detector leans on: for each of the `top_count`
// enhanced features with the largest |svm weight|, every masked order of
// that feature's band in that feature's config.
inline FeatureSubset interested_subset(const DetectorModel& m, std::size_t top_count) {
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < m.enhancement.keep_mask.size(); ++j)
    if (m.enhancement.keep_mask[j]) kept.push_back(j);
  std::vector<std::size_t> rank(kept.size());
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(m.svm.weights[a]) > std::abs(m.svm.weights[b]);
  });
  FeatureSubset subset;
  const std::size_t nb = m.partition.num_bands;
  for (std::size_t r = 0; r < std::min(top_count, rank.size()); ++r) {
    const std::size_t entry = kept[rank[r]];
    const std::size_t config = entry / nb, band = entry % nb;
    for (const auto& o : m.plan.order_mask)
      if (m.partition.band_of(o.n, o.m) == band)
        subset.keys.push_back({o.n, o.m, m.plan.retained_configs[config]});
  }
  std::sort(subset.keys.begin(), subset.keys.end());
  return subset;
}

}  // namespace krawdetect
