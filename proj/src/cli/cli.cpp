#include "micronas/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "micronas/dnas/search.hpp"
#include "micronas/errors.hpp"
#include "micronas/hw_proxy/hw_proxy.hpp"
#include "micronas/resources/resources.hpp"
#include "micronas/tasks/dataset_io.hpp"
#include "micronas/tasks/tasks.hpp"

namespace fs = std::filesystem;

namespace micronas::cli {

namespace {

std::int64_t parse_scaled(const std::string& text, const char* what,
                          const std::vector<std::pair<std::string, std::int64_t>>& suffixes) {
  std::size_t pos = 0;
  while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
  if (pos == 0) throw UsageError(std::string("invalid ") + what + " '" + text + "'");
  std::string suffix = text.substr(pos);
  std::transform(suffix.begin(), suffix.end(), suffix.begin(), [](unsigned char c) { return std::toupper(c); });
  std::int64_t mult = 0;
  for (const auto& [s, m] : suffixes) {
    if (suffix == s) mult = m;
  }
  if (mult == 0) throw UsageError(std::string("invalid ") + what + " suffix in '" + text + "'");
  std::int64_t v = 0;
  try {
    v = std::stoll(text.substr(0, pos));
  } catch (const std::exception&) {
    throw UsageError(std::string(what) + " '" + text + "' is out of range");
  }
  if (v > std::numeric_limits<std::int64_t>::max() / mult) throw UsageError(std::string(what) + " is too large");
  return v * mult;
}

Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path);
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

fs::path resolve_relative(const std::string& config_path, const std::string& p) {
  fs::path q(p);
  if (q.is_absolute()) return q;
  return fs::path(config_path).parent_path() / q;
}

// ---- tasks ----

struct TaskDescription {
  std::string kind;
  SpectrogramTaskSpec spectrogram;
  AdTaskSpec anomaly;
};

TaskDescription task_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError("task must be an object with a 'kind'");
  TaskDescription t;
  t.kind = j["kind"].get<std::string>();
  auto check_keys = [&](const std::set<std::string>& keys) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!keys.count(it.key())) throw ConfigError("task: unknown field '" + it.key() + "'");
    }
  };
  try {
    if (t.kind == "spectrogram") {
      check_keys({"kind", "num_classes", "samples_per_class", "shape", "jitter", "seed"});
      auto& s = t.spectrogram;
      s.num_classes = j.value("num_classes", s.num_classes);
      s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
      if (j.contains("shape")) {
        const auto v = j["shape"].get<std::vector<int>>();
        if (v.size() != 3) throw ConfigError("task shape must have 3 entries");
        s.shape = {v[0], v[1], v[2]};
      }
      s.jitter = j.value("jitter", s.jitter);
      s.seed = j.value("seed", s.seed);
    } else if (t.kind == "anomaly") {
      check_keys({"kind", "num_machine_ids", "train_per_id", "test_normal_per_id", "test_anomalous_per_id",
                  "perturbation", "seed"});
      auto& a = t.anomaly;
      a.num_machine_ids = j.value("num_machine_ids", a.num_machine_ids);
      a.train_per_id = j.value("train_per_id", a.train_per_id);
      a.test_normal_per_id = j.value("test_normal_per_id", a.test_normal_per_id);
      a.test_anomalous_per_id = j.value("test_anomalous_per_id", a.test_anomalous_per_id);
      a.perturbation = j.value("perturbation", a.perturbation);
      a.seed = j.value("seed", a.seed);
    } else {
      throw ConfigError("unknown task kind '" + t.kind + "' (expected spectrogram or anomaly)");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task: ") + e.what());
  }
  return t;
}

TaskData generate(const TaskDescription& t, std::optional<std::uint64_t> seed) {
  if (t.kind == "spectrogram") {
    auto s = t.spectrogram;
    if (seed) s.seed = *seed;
    return gen_synthetic_spectrogram_task(s);
  }
  auto a = t.anomaly;
  if (seed) a.seed = *seed;
  return gen_synthetic_ad_task(a);
}

/// Datasets from the config's "data" directory when given, else generated
/// from its "task" section.
TaskData load_task_data(const Json& cfg, const std::string& cfg_path, std::optional<std::uint64_t> seed,
                        std::vector<std::string>& inputs) {
  if (cfg.contains("data")) {
    const auto dir = resolve_relative(cfg_path, cfg["data"].get<std::string>());
    TaskData d;
    d.train = read_dataset((dir / "train.bin").string(), "train");
    d.test = read_dataset((dir / "test.bin").string(), "test");
    inputs.push_back((dir / "train.bin").string());
    inputs.push_back((dir / "test.bin").string());
    return d;
  }
  if (!cfg.contains("task")) throw ConfigError(cfg_path + ": needs a 'task' or 'data' section");
  return generate(task_from_json(cfg["task"]), seed);
}

// ---- shared flag handling ----

struct CommonFlags {
  std::string config;
  std::string arch;
  std::string mcu;
  std::string csv;
  std::string budget_sram;
  std::string budget_flash;
  std::string budget_ops;
  std::string hw_model;
  int bits = 8;
  bool bits_given = false;
  std::optional<std::uint64_t> seed;
  std::string out;
};

bool is_builtin_mcu(const std::string& name) {
  try {
    find_profile(builtin_profiles(), name);
    return true;
  } catch (const ConfigError&) {
    return false;
  }
}

Budget apply_budget_flags(Budget b, const CommonFlags& f) {
  // with a hardware model, --mcu may name a calibrated device only
  if (!f.mcu.empty() && (f.hw_model.empty() || is_builtin_mcu(f.mcu))) {
    const auto& p = find_profile(builtin_profiles(), f.mcu);
    b.sram_bytes = p.sram_bytes;
    b.flash_bytes = p.flash_bytes;
  }
  if (!f.budget_sram.empty()) b.sram_bytes = parse_bytes(f.budget_sram);
  if (!f.budget_flash.empty()) b.flash_bytes = parse_bytes(f.budget_flash);
  if (!f.budget_ops.empty()) b.max_ops = parse_ops(f.budget_ops);
  b.validate();
  return b;
}

void require(const std::string& value, const char* flag, const char* cmd) {
  if (value.empty()) throw UsageError(std::string(cmd) + " requires " + flag);
}

struct Outputs {
  std::vector<std::string> written;
  void file(const std::string& path, const std::string& text) {
    write_file_atomic(path, text);
    written.push_back(path);
  }
};

void write_manifest(const std::string& path, RunManifest m, std::chrono::steady_clock::time_point start) {
  m.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file_atomic(path, dump(manifest_to_json(m)));
}

std::shared_ptr<const Supernet> load_network(const std::string& path) {
  return std::make_shared<const Supernet>(Supernet::from_json(read_json_file(path)));
}

// ---- subcommands ----

int cmd_gen_data(const CommonFlags& f, std::ostream& out) {
  require(f.config, "--config", "gen-data");
  require(f.out, "--out", "gen-data");
  const auto start = std::chrono::steady_clock::now();
  const Json cfg = read_json_file(f.config);
  const Json task_json = cfg.contains("task") ? cfg["task"] : cfg;
  const auto td = task_from_json(task_json);
  const auto data = generate(td, f.seed);
  fs::create_directories(f.out);
  const auto train = (fs::path(f.out) / "train.bin").string();
  const auto test = (fs::path(f.out) / "test.bin").string();
  write_dataset(train, data.train);
  write_dataset(test, data.test);
  RunManifest m{"gen-data", {f.config}, f.seed.value_or(td.kind == "spectrogram" ? td.spectrogram.seed : td.anomaly.seed), kToolVersion,
                {train, test}, 0.0};
  write_manifest((fs::path(f.out) / "manifest.json").string(), m, start);
  out << dump(Json{{"train", train},
                   {"test", test},
                   {"train_samples", data.train.size()},
                   {"test_samples", data.test.size()}});
  return kExitOk;
}

int cmd_calibrate(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  require(f.csv, "--csv", "calibrate");
  const auto start = std::chrono::steady_clock::now();
  std::ifstream is(f.csv);
  if (!is) throw ConfigError("cannot open " + f.csv);
  const auto rows = read_measurements(is);
  const auto models = fit_all_groups(rows);
  for (const auto& m : models) {
    for (const auto& w : m.warnings) err << "warning: " << m.backbone_id << "/" << m.mcu_id << ": " << w << "\n";
  }
  const auto doc = dump(models_to_json(models));
  if (f.out.empty()) {
    out << doc;
  } else {
    write_file_atomic(f.out, doc);
    write_manifest(f.out + ".manifest.json", RunManifest{"calibrate", {f.csv}, 0, kToolVersion, {f.out}, 0.0},
                   start);
  }
  return kExitOk;
}

const HwProxyModel& pick_hw_model(const std::vector<HwProxyModel>& models, const CommonFlags& f,
                                  const Supernet& net) {
  std::vector<const HwProxyModel*> cands;
  for (const auto& m : models) {
    if (f.mcu.empty() || m.mcu_id == f.mcu) cands.push_back(&m);
  }
  if (cands.size() > 1 && net.search_section().is_object() && net.search_section().contains("backbone_id")) {
    const auto b = net.search_section()["backbone_id"].get<std::string>();
    std::erase_if(cands, [&](const HwProxyModel* m) { return m->backbone_id != b; });
  }
  if (cands.size() == 1) return *cands.front();
  if (cands.empty()) throw ConfigError("no hardware model in " + f.hw_model + " matches MCU '" + f.mcu + "'");
  throw ConfigError(f.hw_model + " holds several matching models; select one with --mcu");
}

int cmd_estimate(const CommonFlags& f, std::ostream& out) {
  require(f.arch, "--arch", "estimate");
  const auto start = std::chrono::steady_clock::now();
  const auto net = load_network(f.arch);
  if (!net->decisions().empty()) {
    throw ConfigError(f.arch + " still has " + std::to_string(net->decisions().size()) +
                      " open decisions; estimate needs a resolved architecture");
  }
  const BitWidths bits{f.bits, f.bits};
  const auto report = discrete_resources(*net, bits);
  const Budget budget = apply_budget_flags(Budget{}, f);
  Json j = Json::object();
  j["architecture"] = net->name();
  if (!f.mcu.empty()) j["mcu"] = is_builtin_mcu(f.mcu) ? find_profile(builtin_profiles(), f.mcu).name : f.mcu;
  j["bits"] = f.bits;
  j["report"] = report_to_json(report);
  j["budget"] = budget_to_json(budget);
  j["budget_check"] = budget_check_to_json(check_budget(report, budget));
  std::vector<std::string> inputs{f.arch};
  if (!f.hw_model.empty()) {
    inputs.push_back(f.hw_model);
    const auto models = models_from_json(read_json_file(f.hw_model));
    const auto& m = pick_hw_model(models, f, *net);
    Json hw = Json::object();
    hw["backbone_id"] = m.backbone_id;
    hw["mcu_id"] = m.mcu_id;
    hw["latency_ms"] = predict_latency(m, static_cast<double>(report.total_ops));
    if (m.mean_power_mw) {
      const auto e = estimate_energy(m, static_cast<double>(report.total_ops));
      hw["energy_mj"] = e.energy_mj;
      hw["low_confidence"] = e.low_confidence;
    }
    j["hardware"] = hw;
  }
  if (f.out.empty()) {
    out << dump(j);
  } else {
    write_file_atomic(f.out, dump(j));
    write_manifest(f.out + ".manifest.json", RunManifest{"estimate", inputs, 0, kToolVersion, {f.out}, 0.0}, start);
  }
  return kExitOk;
}

int cmd_search(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  require(f.config, "--config", "search");
  require(f.out, "--out", "search");
  const auto start = std::chrono::steady_clock::now();
  const Json cfg = read_json_file(f.config);
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    static const std::set<std::string> keys{"backbone", "task", "data", "search", "finetune", "ops_budget_fraction"};
    if (!keys.count(it.key())) throw ConfigError(f.config + ": unknown field '" + it.key() + "'");
  }
  if (!cfg.contains("backbone")) throw ConfigError(f.config + ": missing 'backbone'");
  const auto backbone_path = resolve_relative(f.config, cfg["backbone"].get<std::string>()).string();
  const auto net = load_network(backbone_path);

  SearchConfig sc = cfg.contains("search") ? search_config_from_json(cfg["search"]) : SearchConfig{};
  FinetuneConfig fc = cfg.contains("finetune") ? finetune_config_from_json(cfg["finetune"]) : FinetuneConfig{};
  if (f.seed) sc.seed = fc.seed = *f.seed;
  if (f.bits_given) {
    sc.bits = BitWidths{f.bits, f.bits};
    fc.quant_bits = f.bits;
  }
  if (cfg.contains("ops_budget_fraction")) {
    const double frac = cfg["ops_budget_fraction"].get<double>();
    if (!(frac > 0.0)) throw ConfigError("ops_budget_fraction must be positive");
    const auto max_ops = discrete_resources(*net, net->max_selection(), sc.bits).total_ops;
    sc.budget.max_ops = static_cast<std::int64_t>(std::floor(frac * static_cast<double>(max_ops)));
  }
  sc.budget = apply_budget_flags(sc.budget, f);
  sc.validate();
  // fail fast, before any data is generated or trained on
  check_min_vertex(*net, sc.budget, sc.bits);

  std::vector<std::string> inputs{f.config, backbone_path};
  const auto data = load_task_data(cfg, f.config, f.seed, inputs);
  auto outcome = run_search(net, data.train, data.test, sc, fc);
  if (!outcome.result.check.pass) {
    err << "warning: selected architecture violates";
    for (const auto& v : outcome.result.check.violated) err << " " << v;
    err << "\n";
  }
  fs::create_directories(f.out);
  Outputs o;
  const auto result_path = (fs::path(f.out) / "search_result.json").string();
  const auto arch_path = (fs::path(f.out) / "architecture.json").string();
  Json rj = search_result_to_json(outcome.result, *net);
  rj["search_config"] = search_config_to_json(sc);
  rj["finetune_config"] = finetune_config_to_json(fc);
  o.file(result_path, dump(rj));
  Json arch = architecture_document(*outcome.network.spec);
  o.file(arch_path, dump(arch));
  write_manifest((fs::path(f.out) / "manifest.json").string(),
                 RunManifest{"search", inputs, sc.seed, kToolVersion, o.written, 0.0}, start);
  out << dump(Json{{"selection", selection_to_json(outcome.result.selection)},
                   {"budget_check", budget_check_to_json(outcome.result.check)},
                   {"finetune_accuracy", outcome.result.finetune_accuracy},
                   {"result", result_path},
                   {"architecture", arch_path}});
  return kExitOk;
}

struct TrainedNetwork {
  std::shared_ptr<const Supernet> net;
  TaskData data;
  FinetuneConfig fc;
  std::vector<std::string> inputs;
};

TrainedNetwork prepare_training(const CommonFlags& f, const char* cmd) {
  require(f.arch, "--arch", cmd);
  require(f.config, "--config", cmd);
  TrainedNetwork t;
  t.net = load_network(f.arch);
  if (!t.net->decisions().empty()) throw ConfigError(f.arch + " still has open decisions");
  const Json cfg = read_json_file(f.config);
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    // search-only sections are tolerated so one config drives the whole pipeline
    static const std::set<std::string> keys{"task", "data", "finetune", "backbone", "search", "ops_budget_fraction"};
    if (!keys.count(it.key())) throw ConfigError(f.config + ": unknown field '" + it.key() + "'");
  }
  t.fc = cfg.contains("finetune") ? finetune_config_from_json(cfg["finetune"]) : FinetuneConfig{};
  if (f.seed) t.fc.seed = *f.seed;
  if (f.bits_given) t.fc.quant_bits = f.bits;
  t.inputs = {f.arch, f.config};
  t.data = load_task_data(cfg, f.config, f.seed, t.inputs);
  return t;
}

int cmd_train_eval(const CommonFlags& f, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  auto t = prepare_training(f, "train-eval");
  SupernetModel model(t.net, t.fc.seed);
  const auto r = finetune(model, t.data.train, t.data.test, t.fc);
  Json j = Json::object();
  j["architecture"] = t.net->name();
  j["accuracy"] = r.test_accuracy;
  j["quant_bits"] = t.fc.quant_bits;
  j["finetune_config"] = finetune_config_to_json(t.fc);
  Json h = Json::array();
  for (const auto& e : r.history) {
    h.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}, {"test_accuracy", e.test_accuracy}});
  }
  j["history"] = h;
  j["report"] = report_to_json(discrete_resources(*t.net, BitWidths{f.bits, f.bits}));
  if (f.out.empty()) {
    out << dump(j);
  } else {
    write_file_atomic(f.out, dump(j));
    write_manifest(f.out + ".manifest.json", RunManifest{"train-eval", t.inputs, t.fc.seed, kToolVersion, {f.out}, 0.0},
                   start);
  }
  return kExitOk;
}

int cmd_ad_eval(const CommonFlags& f, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  // Scoring an existing CSV needs no model.
  if (!f.csv.empty()) {
    std::ifstream is(f.csv);
    if (!is) throw ConfigError("cannot open " + f.csv);
    std::string line;
    std::getline(is, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "sample_id,score,is_anomalous") throw ConfigError(f.csv + ": expected header sample_id,score,is_anomalous");
    std::vector<double> scores;
    std::vector<int> flags;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string id, score, flag;
      if (!std::getline(ss, id, ',') || !std::getline(ss, score, ',') || !std::getline(ss, flag)) {
        throw ConfigError(f.csv + ": line " + std::to_string(lineno) + " needs 3 fields");
      }
      try {
        scores.push_back(std::stod(score));
        flags.push_back(std::stoi(flag));
      } catch (const std::exception&) {
        throw ConfigError(f.csv + ": line " + std::to_string(lineno) + " is not numeric");
      }
    }
    out << dump(Json{{"auc", auc_roc(scores, flags)}, {"samples", scores.size()}});
    return kExitOk;
  }
  require(f.out, "--out (or --csv)", "ad-eval");
  auto t = prepare_training(f, "ad-eval");
  if (t.data.test.flags.empty()) throw ConfigError("ad-eval needs an anomaly test set with anomaly flags");
  SupernetModel model(t.net, t.fc.seed);
  const auto r = finetune(model, t.data.train, t.data.test, t.fc);
  const auto scores = anomaly_scores(model, t.data.test);
  const double auc = auc_roc(scores, t.data.test.flags);
  fs::create_directories(f.out);
  Outputs o;
  const auto csv = (fs::path(f.out) / "scores.csv").string();
  const auto tmp = csv + ".tmp";
  write_scores_csv(tmp, scores, t.data.test.flags);
  fs::rename(tmp, csv);
  o.written.push_back(csv);
  Json j = Json::object();
  j["architecture"] = t.net->name();
  j["auc"] = auc;
  j["machine_id_accuracy"] = r.test_accuracy;
  j["quant_bits"] = t.fc.quant_bits;
  j["scores"] = csv;
  o.file((fs::path(f.out) / "ad_result.json").string(), dump(j));
  write_manifest((fs::path(f.out) / "manifest.json").string(),
                 RunManifest{"ad-eval", t.inputs, t.fc.seed, kToolVersion, o.written, 0.0}, start);
  out << dump(j);
  return kExitOk;
}

}  // namespace

std::int64_t parse_bytes(const std::string& text) {
  return parse_scaled(text, "byte count",
                      {{"", 1},
                       {"B", 1},
                       {"K", kKiB},
                       {"KB", kKiB},
                       {"KIB", kKiB},
                       {"M", kKiB * kKiB},
                       {"MB", kKiB * kKiB},
                       {"MIB", kKiB * kKiB}});
}

std::int64_t parse_ops(const std::string& text) {
  return parse_scaled(text, "op count", {{"", 1}, {"K", 1000}, {"M", 1000000}, {"G", 1000000000}});
}

Json manifest_to_json(const RunManifest& m) {
  Json j = Json::object();
  j["command"] = m.command;
  j["config_paths"] = m.config_paths;
  j["seed"] = m.seed;
  j["tool_version"] = m.tool_version;
  j["output_paths"] = m.output_paths;
  j["duration_s"] = m.duration_s;
  return j;
}

void write_file_atomic(const std::string& path, const std::string& text) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot write " + tmp.string());
    os << text;
    if (!os.flush()) throw ConfigError("failed writing " + tmp.string());
  }
  fs::rename(tmp, target);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hardware-aware differentiable architecture search for microcontrollers", "micronas"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  CommonFlags f;

  std::optional<std::uint64_t> seed_opt;
  auto add_common = [&](CLI::App* sub, bool budget, bool hw) {
    sub->add_option("--config", f.config, "JSON configuration");
    sub->add_option("--seed", seed_opt, "random seed (overrides the config)");
    sub->add_option("--out", f.out, "output file or directory");
    sub->add_option("--bits", f.bits, "deployment bit-width")->check(CLI::IsMember({8, 4}));
    if (budget) {
      sub->add_option("--mcu", f.mcu, "target board (stm32f446re, stm32f746zg, stm32f767zi)");
      sub->add_option("--budget-sram", f.budget_sram, "SRAM limit in bytes (K/M suffixes allowed)");
      sub->add_option("--budget-flash", f.budget_flash, "flash limit in bytes (K/M suffixes allowed)");
      sub->add_option("--budget-ops", f.budget_ops, "op limit (K/M/G suffixes allowed)");
    }
    if (hw) sub->add_option("--hw-model", f.hw_model, "fitted latency model JSON");
  };

  auto* gen = app.add_subcommand("gen-data", "write synthetic train/test datasets");
  add_common(gen, false, false);
  auto* cal = app.add_subcommand("calibrate", "fit latency/energy models from measurements");
  add_common(cal, false, false);
  cal->add_option("--csv", f.csv, "measurement CSV");
  auto* search = app.add_subcommand("search", "run the architecture search");
  add_common(search, true, false);
  auto* est = app.add_subcommand("estimate", "resource report for an architecture");
  add_common(est, true, true);
  est->add_option("--arch", f.arch, "architecture JSON");
  auto* tr = app.add_subcommand("train-eval", "train an architecture and report accuracy");
  add_common(tr, false, false);
  tr->add_option("--arch", f.arch, "architecture JSON");
  auto* ad = app.add_subcommand("ad-eval", "anomaly scores and AUC");
  add_common(ad, false, false);
  ad->add_option("--arch", f.arch, "architecture JSON");
  ad->add_option("--csv", f.csv, "existing scores CSV to evaluate");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    err << failing->help();
    return kExitUsage;
  }
  f.seed = seed_opt;
  for (auto* sub : {gen, cal, search, est, tr, ad}) {
    if (*sub && sub->count("--bits") > 0) f.bits_given = true;
  }

  try {
    if (*gen) return cmd_gen_data(f, out);
    if (*cal) return cmd_calibrate(f, out, err);
    if (*search) return cmd_search(f, out, err);
    if (*est) return cmd_estimate(f, out);
    if (*tr) return cmd_train_eval(f, out);
    if (*ad) return cmd_ad_eval(f, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const BudgetError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON value: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace micronas::cli
