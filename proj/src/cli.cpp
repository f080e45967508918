#include "fusenet/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "fusenet/data.hpp"
#include "fusenet/error.hpp"
#include "fusenet/metrics.hpp"
#include "fusenet/rng.hpp"
#include "fusenet/train.hpp"

namespace fusenet {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kMinImageSide = 16;
constexpr std::size_t kVggWidthDivisor = 8;

/// Bad flag combinations detected after parsing; reported like parse errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string timestamp_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

InputSize parse_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw UsageError("--size must look like HxW, got '" + text + "'");
  try {
    std::size_t used_h = 0, used_w = 0;
    const std::string hs = text.substr(0, x), ws = text.substr(x + 1);
    const unsigned long h = std::stoul(hs, &used_h), w = std::stoul(ws, &used_w);
    if (used_h != hs.size() || used_w != ws.size()) throw std::invalid_argument(text);
    if (h < kMinImageSide || w < kMinImageSide) {
      throw UsageError("--size " + text + " is below the minimum 16x16");
    }
    return {h, w, 1};
  } catch (const std::logic_error&) {
    throw UsageError("--size must look like HxW, got '" + text + "'");
  }
}

ConfusionMatrix parse_counts(const std::string& text) {
  std::vector<std::size_t> v;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t n = 0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), n);
    if (item.empty() || ec != std::errc() || end != item.data() + item.size()) {
      throw UsageError("--counts expects tp,fp,tn,fn, got '" + text + "'");
    }
    v.push_back(n);
  }
  if (v.size() != 4) throw UsageError("--counts expects tp,fp,tn,fn, got '" + text + "'");
  return {v[0], v[1], v[2], v[3]};
}

/// "accuracy,precision,recall,f1" in percent.
MetricsReport parse_claim(const std::string& name, const std::string& text) {
  std::vector<double> v;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw UsageError("--claim expects four percentages, got '" + text + "'");
    }
  }
  if (v.size() != 4) throw UsageError("--claim expects four percentages, got '" + text + "'");
  MetricsReport r;
  r.model_name = name;
  r.accuracy = v[0] / 100;
  r.precision = v[1] / 100;
  r.recall = v[2] / 100;
  r.f1 = v[3] / 100;
  return r;
}

InputSize dataset_input_size(const Dataset& d) {
  if (d.items.empty()) throw EmptyClass("dataset has no images");
  const Shape& s = d.items.front().pixels.shape();
  return {s.at(1), s.at(2), s.at(0)};
}

Json config_json(const KeyValueConfig& cfg) {
  Json j = Json::object();
  for (const auto& [k, v] : cfg.entries()) j[k] = v;
  return j;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Settings that, together with the dataset, determine a training run.
struct RunSettings {
  std::string profile = "desk-default";
  std::string backbone = "fused";
  std::uint64_t seed = 0;
  double test_ratio = 0.5;
  std::string augment = "rot90,flipH";
  TrainConfig train;

  KeyValueConfig snapshot() const {
    KeyValueConfig cfg;
    cfg.set("profile", profile);
    cfg.set("backbone", backbone);
    cfg.set("test_ratio", test_ratio);
    cfg.set("augment", augment);
    train.write(cfg);
    return cfg;
  }
};

SplitResult split_for(const Dataset& d, double test_ratio, std::uint64_t seed) {
  return stratified_split(d, test_ratio, derive_seed(seed, "split"));
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::size_t n_per_class = 40;
  std::string size = "32x32";
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const InputSize size = parse_size(a.size);
  const Dataset d = synth_generate(a.n_per_class, size.h, size.w, derive_seed(a.seed, "synth"));
  save_dataset(d, a.out);
  out << "wrote " << d.size() << " images to " << a.out << " (fingerprint "
      << hex64(fingerprint(d)) << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string profile = "desk-default";
  std::string backbone = "fused";
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config;
  std::optional<std::size_t> epochs;
  bool quiet = false;
};

RunSettings resolve_settings(const TrainArgs& a) {
  RunSettings s;
  s.profile = a.profile;
  s.backbone = a.backbone;
  TrainConfig base = TrainConfig::profile(a.profile);
  if (!a.config.empty()) {
    const KeyValueConfig file = KeyValueConfig::load(a.config);
    base = TrainConfig::read(file, base);
    if (auto v = file.find("backbone")) s.backbone = *v;
    if (file.contains("test_ratio")) s.test_ratio = file.get_double("test_ratio");
    if (auto v = file.find("augment")) s.augment = *v;
  }
  if (a.seed) base.seed = *a.seed;
  if (a.epochs) base.epochs = *a.epochs;
  base.validate();
  s.seed = base.seed;
  s.train = base;
  return s;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  Json manifest;
  manifest["command"] = "train";
  manifest["timestamps"]["started"] = timestamp_now();

  const RunSettings s = resolve_settings(a);
  const Dataset data = load_dataset(a.data);
  data.validate();
  const ModelConfig model_config = backbone_config(s.backbone, dataset_input_size(data));

  const SplitResult split = split_for(data, s.test_ratio, s.seed);
  const Dataset train_set = augment(split.train, parse_policy(s.augment));
  Model model = Model::build(model_config, derive_seed(s.seed, "init"));

  const fs::path run_dir = a.out;
  const fs::path ckpt_dir = run_dir / "checkpoint";
  fs::create_directories(ckpt_dir);

  const KeyValueConfig snapshot = s.snapshot();
  const fs::path config_path = run_dir / "run.cfg";
  snapshot.save(config_path);

  manifest["profile"] = s.profile;
  manifest["seed"] = s.seed;
  manifest["config"] = config_json(snapshot);
  manifest["dataset"] = {{"path", a.data},
                         {"fingerprint", hex64(fingerprint(data))},
                         {"images", data.size()},
                         {"train_images", train_set.size()},
                         {"test_images", split.test.size()}};

  Json artifacts;
  artifacts["config"] = config_path.string();
  const fs::path curves_path = run_dir / "curves.csv";
  const fs::path manifest_path = run_dir / "manifest.json";

  auto log_epoch = [&](const EpochRecord& r) {
    if (a.quiet) return;
    char line[160];
    std::snprintf(line, sizeof line,
                  "epoch %zu/%zu  train_loss %.4f  train_acc %.4f  val_loss %.4f  val_acc %.4f\n",
                  r.epoch, s.train.epochs, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
    err << line << std::flush;
  };

  EpochCurves curves;
  try {
    curves = train(model, train_set, split.test, s.train, log_epoch);
  } catch (const DivergedLoss& e) {
    e.partial_curves().save_csv(curves_path);
    artifacts["curves"] = curves_path.string();
    artifacts["manifest"] = manifest_path.string();
    manifest["artifacts"] = artifacts;
    manifest["status"] = "diverged";
    manifest["error"] = e.what();
    manifest["timestamps"]["finished"] = timestamp_now();
    write_json(manifest_path, manifest);
    throw;
  }

  curves.save_csv(curves_path);
  model.save(ckpt_dir);
  KeyValueConfig run_info;
  run_info.set("backbone", s.backbone);
  run_info.set("seed", static_cast<std::size_t>(s.seed));
  run_info.set("test_ratio", s.test_ratio);
  run_info.save(ckpt_dir / "run.cfg");

  artifacts["curves"] = curves_path.string();
  artifacts["checkpoint"] = {(ckpt_dir / "model.cfg").string(), (ckpt_dir / "params.ftns").string(),
                             (ckpt_dir / "params.index").string(),
                             (ckpt_dir / "run.cfg").string()};
  artifacts["manifest"] = manifest_path.string();
  manifest["artifacts"] = artifacts;
  manifest["status"] = "completed";
  manifest["timestamps"]["finished"] = timestamp_now();
  write_json(manifest_path, manifest);

  const EpochRecord& last = curves.records.back();
  out << "trained " << s.backbone << " for " << last.epoch << " epochs: train_acc "
      << format_percent(last.train_acc) << "%, test_acc " << format_percent(last.val_acc)
      << "%\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "all";
  std::string out;
  std::string name;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const fs::path ckpt = a.checkpoint;
  if (!fs::exists(ckpt / "model.cfg")) throw IoError("no checkpoint at " + ckpt.string());
  Model model = Model::load(ckpt);

  Dataset data = load_dataset(a.data);
  std::string name = a.name;
  if (a.split != "all" || name.empty()) {
    const KeyValueConfig info = KeyValueConfig::load(ckpt / "run.cfg");
    if (name.empty()) name = info.get("backbone");
    if (a.split != "all") {
      SplitResult s = split_for(data, info.get_double("test_ratio"), info.get_size("seed"));
      data = a.split == "train" ? std::move(s.train) : std::move(s.test);
    }
  }

  const EvalResult result = evaluate(model, data);
  const MetricsReport report = MetricsReport::from_counts(name, result.matrix);
  if (!a.out.empty()) save_report(a.out, report);
  write_report(out, report);
  return kExitOk;
}

// ---------------------------------------------------------------- compare

struct CompareArgs {
  std::vector<std::string> reports;
  std::vector<std::string> counts;
  std::vector<std::string> names;
  std::vector<std::string> claims;
  double tol = 0.005;
  std::string csv;
};

int cmd_compare(const CompareArgs& a, std::ostream& out) {
  if (a.reports.empty() && a.counts.empty()) {
    throw UsageError("compare needs at least one report file or --counts");
  }
  if (a.names.size() != a.counts.size()) {
    throw UsageError("every --counts needs a matching --name");
  }
  if (a.claims.size() > a.counts.size()) {
    throw UsageError("--claim pairs with --counts in order; too many claims");
  }

  std::vector<MetricsReport> rows;
  for (const auto& path : a.reports) rows.push_back(load_report(path));
  for (std::size_t i = 0; i < a.counts.size(); ++i) {
    const ConfusionMatrix cm = parse_counts(a.counts[i]);
    MetricsReport r = MetricsReport::from_counts(a.names[i], cm);
    if (i < a.claims.size()) {
      for (const auto& d : validate_report(cm, parse_claim(a.names[i], a.claims[i]), a.tol)) {
        r.flags.push_back(d.flag());
      }
    }
    rows.push_back(std::move(r));
  }

  const ComparisonTable table = compare(rows);
  out << table.to_text();
  if (!a.csv.empty()) {
    std::ofstream csv(a.csv, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + a.csv);
    csv << table.to_csv();
  }
  return kExitOk;
}

}  // namespace

ModelConfig backbone_config(const std::string& name, InputSize input_size) {
  ModelConfig config;
  if (name == "vgg16" || name == "vgg19") {
    config.backbones = {vgg_spec(name == "vgg16" ? 16 : 19, input_size, 64, kVggWidthDivisor)};
  } else if (name == "effnet") {
    BackboneSpec spec = effnet_tiny_spec(32);
    spec.input_size = input_size;
    config.backbones = {spec};
  } else if (name == "fused") {
    config = fused_tiny_config();
    for (auto& spec : config.backbones) spec.input_size = input_size;
  } else {
    throw InvalidArgument("unknown backbone '" + name + "'");
  }
  config.validate();
  return config;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fused VGG/EfficientNet + Bi-LSTM classifier for brain MRI images", "fusenet"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a seeded synthetic PGM corpus");
  synth_cmd->add_option("--n-per-class", synth.n_per_class, "Images per class")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth.size, "Image size HxW (at least 16x16)");
  synth_cmd->add_option("--seed", synth.seed, "Seed");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Split, augment and train a model");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--profile", tr.profile, "Hyperparameter profile")
      ->check(CLI::IsMember({"paper-vgg19", "paper-fusion", "desk-default"}));
  train_cmd->add_option("--backbone", tr.backbone, "Backbone")
      ->check(CLI::IsMember({"vgg16", "vgg19", "effnet", "fused"}));
  train_cmd->add_option("--seed", tr.seed, "Seed for split, init and shuffling");
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--config", tr.config, "key=value overrides")->check(CLI::ExistingFile);
  train_cmd->add_option("--epochs", tr.epochs, "Override the profile's epoch count")
      ->check(CLI::PositiveNumber);
  train_cmd->add_flag("--quiet", tr.quiet, "Do not log epochs");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write a report");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "Which part of the dataset to score")
      ->check(CLI::IsMember({"all", "train", "test"}));
  eval_cmd->add_option("--out", ev.out, "Report file");
  eval_cmd->add_option("--name", ev.name, "Model name in the report");

  CompareArgs cmp;
  auto* compare_cmd = app.add_subcommand("compare", "Tabulate reports or literal counts");
  compare_cmd->add_option("reports", cmp.reports, "Report files");
  compare_cmd->add_option("--counts", cmp.counts, "tp,fp,tn,fn (repeatable)");
  compare_cmd->add_option("--name", cmp.names, "Name for each --counts");
  compare_cmd->add_option("--claim", cmp.claims,
                          "Claimed accuracy,precision,recall,f1 in percent for each --counts");
  compare_cmd->add_option("--tol", cmp.tol, "Validator tolerance (fraction)");
  compare_cmd->add_option("--csv", cmp.csv, "Also write the table as CSV");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*train_cmd) return cmd_train(tr, out, err);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*compare_cmd) return cmd_compare(cmp, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace fusenet
