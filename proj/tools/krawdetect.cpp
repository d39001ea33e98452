// krawdetect: key management, attack generation, detector training,
// detection and experiment runs.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "krawdetect/krawdetect.hpp"

namespace fs = std::filesystem;
using namespace krawdetect;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitStability = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return kExitUsage;
    case ErrorKind::Stability: return kExitStability;
    default: return kExitData;
  }
}

// Flags shared by several subcommands. Unset optionals leave the config alone.
struct Overrides {
  std::string config;
  std::string key;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
  std::string attack;
  std::string mode;
  std::optional<std::size_t> bands;
  std::optional<double> blocking_prob;
};

CliConfig effective_config(const Overrides& o) {
  CliConfig c = o.config.empty() ? config_from_json(nlohmann::ordered_json::object()) : load_config(o.config);
  auto& e = c.experiment;
  if (o.workers) e.workers = *o.workers;
  if (o.seed) e.seed = *o.seed;
  if (!o.attack.empty()) {
    const double eps = o.epsilon.value_or(e.attacks.front().spec.epsilon);
    e.attacks = {detail::attack_from_json({{"kind", o.attack}, {"epsilon", eps}})};
  } else if (o.epsilon) {
    for (auto& a : e.attacks) {
      a.spec.alpha = a.spec.kind == AttackKind::Fgsm ? *o.epsilon : a.spec.alpha * (*o.epsilon / a.spec.epsilon);
      a.spec.epsilon = *o.epsilon;
    }
  }
  if (!o.mode.empty()) e.detector.mode = parse_integration_mode(o.mode);
  if (o.bands) e.detector.num_bands = *o.bands;
  if (o.blocking_prob) e.detector.blocking_prob = *o.blocking_prob;
  // Round-trip so overrides go through the same validation as the file.
  return config_from_json(config_to_json(c));
}

DetectorKey resolve_key(const std::string& flag) {
  std::string path = flag;
  if (path.empty())
    if (const char* env = std::getenv("KRAWDETECT_KEYFILE")) path = env;
  if (path.empty()) throw UsageError("a detector key is required (--key or KRAWDETECT_KEYFILE)");
  return read_key_file(path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON config file; flags override it")->check(CLI::ExistingFile);
  cmd->add_option("--workers", o.workers, "parallel workers");
  cmd->add_option("--seed", o.seed, "experiment seed");
  cmd->add_option("--epsilon", o.epsilon, "attack budget (L-infinity)");
  cmd->add_option("--attack", o.attack, "attack kind: fgsm, bim or pgd");
  cmd->add_option("--mode", o.mode, "band integration: raw or magnitude");
  cmd->add_option("--bands", o.bands, "number of frequency bands");
  cmd->add_option("--blocking-prob", o.blocking_prob, "per-candidate blocking probability");
}

int cmd_keygen(const std::string& out) {
  const auto key = generate_key();
  write_key_file(out, key);
  std::cerr << "wrote key " << out << " (fingerprint " << to_hex(key_fingerprint(key)) << ")\n";
  return kExitOk;
}

int cmd_make_digits(std::size_t count, std::uint64_t seed, const std::string& prefix, std::size_t workers) {
  const auto ds = make_synthetic_digits(count, seed, workers);
  write_idx_pair(ds, prefix + "-images.idx", prefix + "-labels.idx");
  std::cerr << "wrote " << count << " digits to " << prefix << "-{images,labels}.idx\n";
  return kExitOk;
}

// Writes the attacked pool, the matching clean pool and a manifest.
int cmd_attack_gen(const Overrides& o, const std::string& images, const std::string& labels, const std::string& prefix) {
  auto c = effective_config(o);
  auto& e = c.experiment;
  if (!images.empty()) {
    e.data.images = images;
    e.data.labels = labels;
  }
  const auto data = prepare_data(e);
  const auto surrogate = train_surrogate(data.surrogate_set, e.surrogate);
  const auto& spec = e.attacks.front();
  const auto adv = attack_pool(surrogate, data.clean, spec.spec, e.seed ^ 0xA77AC3ULL, e.workers);

  std::size_t fooled = 0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const int before = surrogate.classify(data.clean.examples[i].image.pixels);
    if (surrogate.classify(adv[i].pixels) != before) ++fooled;
  }
  write_idx_images(prefix + "-adv-images.idx", adv);
  write_idx_pair(data.clean, prefix + "-clean-images.idx", prefix + "-labels.idx");

  nlohmann::ordered_json m;
  m["attack"] = {{"name", spec.label()},
                 {"kind", to_string(spec.spec.kind)},
                 {"epsilon", spec.spec.epsilon},
                 {"steps", spec.spec.steps},
                 {"alpha", spec.spec.alpha},
                 {"rand_init", spec.spec.rand_init},
                 {"quantize", spec.spec.quantize}};
  m["count"] = adv.size();
  m["fooling_rate"] = adv.empty() ? 0.0 : static_cast<double>(fooled) / static_cast<double>(adv.size());
  m["surrogate_fingerprint"] = to_hex(surrogate.fingerprint());
  m["files"] = {{"adversarial", prefix + "-adv-images.idx"},
                {"clean", prefix + "-clean-images.idx"},
                {"labels", prefix + "-labels.idx"}};
  m["config"] = config_to_json(c);
  write_text(prefix + "-manifest.json", m.dump(2) + "\n");
  std::cerr << "attacked " << adv.size() << " images, fooling rate " << m["fooling_rate"].get<double>() << "\n";
  return kExitOk;
}

int cmd_train(const Overrides& o, const std::string& clean, const std::string& adv, const std::string& model_path) {
  const auto key = resolve_key(o.key);
  const auto c = effective_config(o);
  auto clean_imgs = load_idx_images(clean);
  auto adv_imgs = load_idx_images(adv);
  std::vector<Image> images = std::move(clean_imgs);
  std::vector<int> labels(images.size(), 0);
  for (auto& img : adv_imgs) {
    images.push_back(std::move(img));
    labels.push_back(1);
  }
  const auto model = train_detector(images, labels, key, c.experiment.detector, c.experiment.workers);
  save_model(model, model_path);
  std::cerr << "trained on " << images.size() << " images; model " << model_path << " fingerprint "
            << to_hex(model_fingerprint(model)) << "\n";
  return kExitOk;
}

int cmd_detect(const std::string& model_path, const std::string& image, const std::string& images, std::size_t workers) {
  if (image.empty() == images.empty()) throw UsageError("give exactly one of --image or --images");
  const Detector det(load_model(model_path));
  std::vector<Image> batch;
  if (!image.empty()) batch.push_back(load_pgm(image));
  else batch = load_idx_images(images);
  const auto preds = parallel_map<Prediction>(batch.size(), workers, [&](std::size_t i) { return det(batch[i]); });
  for (std::size_t i = 0; i < preds.size(); ++i) {
    nlohmann::ordered_json line{{"index", i}, {"label", preds[i].label}, {"margin", preds[i].margin}};
    std::cout << line.dump() << '\n';
  }
  return kExitOk;
}

int cmd_evaluate(const Overrides& o, const std::string& out_dir) {
  const auto key = resolve_key(o.key);
  auto c = effective_config(o);
  if (!out_dir.empty()) c.output.dir = out_dir;
  auto e = c.experiment;
  e.key = key;
  auto report = run_experiment(e);
  report.config = config_to_json(c);
  fs::create_directories(c.output.dir);
  for (const auto& f : c.output.formats) {
    const auto path = fs::path(c.output.dir) / (c.output.basename + "." + f);
    emit_report(report, path, f == "csv" ? ReportFormat::Csv : ReportFormat::Json);
    std::cerr << "wrote " << path.string() << "\n";
  }
  std::cout << report_csv(report);
  return kExitOk;
}

int cmd_selftest() {
  bool ok = true;
  for (const auto& s : run_selftest()) {
    std::cout << format_suite(s) << '\n';
    ok = ok && s.passed;
  }
  std::cout << (ok ? "selftest: all 4 suites passed" : "selftest: FAILED") << '\n';
  return ok ? kExitOk : kExitStability;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keyed Krawtchouk-moment adversarial example detector"};
  app.require_subcommand(1);

  Overrides o;
  std::string out, model, image, images, labels, clean, adv;
  std::size_t count = 1000;
  std::uint64_t digit_seed = 1;
  std::size_t workers = 1;

  auto* keygen = app.add_subcommand("keygen", "write a fresh detector key from OS entropy");
  keygen->add_option("--out", out, "key file")->required();

  auto* digits = app.add_subcommand("make-digits", "write a synthetic digit dataset as an IDX pair");
  digits->add_option("--count", count, "number of images");
  digits->add_option("--seed", digit_seed, "generator seed");
  digits->add_option("--out", out, "output prefix")->required();
  digits->add_option("--workers", workers, "parallel workers");

  auto* attack_gen = app.add_subcommand("attack-gen", "attack a dataset with the surrogate; writes IDX files and a manifest");
  add_common(attack_gen, o);
  attack_gen->add_option("--images", images, "IDX images (default: config data section)");
  attack_gen->add_option("--labels", labels, "IDX labels");
  attack_gen->add_option("--out", out, "output prefix")->required();

  auto* train = app.add_subcommand("train", "train a detector on clean and adversarial IDX images");
  add_common(train, o);
  train->add_option("--key", o.key, "key file (fallback: KRAWDETECT_KEYFILE)");
  train->add_option("--clean", clean, "clean IDX images")->required()->check(CLI::ExistingFile);
  train->add_option("--adversarial", adv, "adversarial IDX images")->required()->check(CLI::ExistingFile);
  train->add_option("--model", model, "output model file")->required();

  auto* detect = app.add_subcommand("detect", "classify images; one JSON line per image");
  detect->add_option("--model", model, "model file")->required()->check(CLI::ExistingFile);
  detect->add_option("--image", image, "single binary PGM image");
  detect->add_option("--images", images, "IDX images");
  detect->add_option("--workers", workers, "parallel workers");

  auto* evaluate = app.add_subcommand("evaluate", "run an experiment protocol and write reports");
  add_common(evaluate, o);
  evaluate->add_option("--key", o.key, "key file (fallback: KRAWDETECT_KEYFILE)");
  evaluate->add_option("--out", out, "report directory (overrides output.dir)");

  auto* selftest = app.add_subcommand("selftest", "orthonormality, oracle, reconstruction and linearity checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (keygen->parsed()) return cmd_keygen(out);
    if (digits->parsed()) return cmd_make_digits(count, digit_seed, out, workers);
    if (attack_gen->parsed()) return cmd_attack_gen(o, images, labels, out);
    if (train->parsed()) return cmd_train(o, clean, adv, model);
    if (detect->parsed()) return cmd_detect(model, image, images, workers);
    if (evaluate->parsed()) return cmd_evaluate(o, out);
    if (selftest->parsed()) return cmd_selftest();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
