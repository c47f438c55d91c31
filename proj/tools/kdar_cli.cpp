// Copyright (c) 2026 The KDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// kdar_cli: data generation, teacher/student training, evaluation, the
// beta x tau sweep and the loss-mode ablation.
//
// Exit codes: 0 success, 1 run finished with failures, 2 usage/config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kdar/checkpoint.hpp"
#include "kdar/datagen.hpp"
#include "kdar/eval.hpp"
#include "kdar/experiments.hpp"
#include "kdar/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.3.0";
constexpr const char* kOutDirEnv = "KDAR_OUT_DIR";

constexpr int kExitOk = 0;
constexpr int kExitFailures = 1;
constexpr int kExitUsage = 2;

// JSON config files. Keys mirror long flag names of the selected subcommand;
// underscores are accepted in place of hyphens. A run manifest is also a valid
// config file: its "config" object is used.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::parse_error& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (j.is_object() && j.contains("command") && j.contains("config")) j = j.at("config");
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");

    const auto subs = root_->get_subcommands();
    if (subs.empty()) throw CLI::ConversionError("config file given without a subcommand");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      if (value.is_null()) continue;
      CLI::ConfigItem item;
      item.parents = {subs.front()->get_name()};
      item.name = key;
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      if (value.is_array()) {
        for (const json& v : value) item.inputs.push_back(scalar(v));
        if (item.inputs.empty()) item.inputs.emplace_back("");
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  const CLI::App* root_;

  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_float()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
      return buf;
    }
    return v.dump();
  }
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string resolve_out_dir(const std::string& flag, const std::string& command) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv(kOutDirEnv);
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  return (root / command).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw kdar::IoError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string join(const std::string& dir, const std::string& file) {
  return (fs::path(dir) / file).string();
}

struct Manifest {
  std::string command;
  json config = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::uint64_t seed = 0;
  std::string started_at = utc_now();
  json extra = json::object();

  void write(const std::string& dir, const std::string& status) const {
    json m{{"command", command},
           {"tool_version", kToolVersion},
           {"config", config},
           {"inputs", inputs},
           {"outputs", outputs},
           {"seed", seed},
           {"started_at", started_at},
           {"finished_at", utc_now()},
           {"status", status}};
    for (const auto& [k, v] : extra.items()) m[k] = v;
    std::ofstream out(join(dir, "manifest.json"), std::ios::trunc);
    if (!out) throw kdar::IoError("cannot write manifest in '" + dir + "'");
    out << m.dump(2) << '\n';
  }
};

void write_text(const std::string& path, const std::string& text) {
  kdar::write_file_bytes(path, text);
}

// ---------------------------------------------------------------------------
// Options

struct DataOptions {
  std::string data_dir;

  std::string path(const char* split) const { return join(data_dir, std::string(split) + ".jsonl"); }

  kdar::Dataset load(const char* split) const {
    std::vector<std::string> warnings;
    kdar::Dataset ds = kdar::load_jsonl(path(split), &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    return ds;
  }
};

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::size_t hidden = 64;
  std::string loss_mode = "kdar";
  double tau = 2.5;
  double alpha = 0.5;
  double beta = 3.0;
  bool kl_tau_squared = true;
  std::string ce_temperature = "unit";
  bool teacher_reweight = true;

  kdar::TrainConfig to_config(std::uint64_t seed) const {
    kdar::TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.hidden = hidden;
    c.seed = seed;
    c.loss_mode = kdar::parse_loss_mode(loss_mode);
    c.kdar.tau = tau;
    c.kdar.alpha = alpha;
    c.kdar.beta = beta;
    c.kdar.scale_kl_by_tau_squared = kl_tau_squared;
    c.kdar.ce_at_unit_temperature = ce_temperature == "unit";
    c.teacher_reweight = teacher_reweight;
    return c;
  }

  json common_json() const {
    return {{"epochs", epochs}, {"batch-size", batch_size}, {"lr", lr}, {"hidden", hidden}};
  }

  void merge_loss_json(json& into) const {
    const json loss = loss_json();
    for (const auto& [k, v] : loss.items()) into[k] = v;
  }

  json loss_json() const {
    return {{"alpha", alpha},
            {"kl-tau-squared", kl_tau_squared},
            {"ce-temperature", ce_temperature}};
  }
};

void add_common_train_flags(CLI::App* sub, TrainOptions& t) {
  sub->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--batch-size", t.batch_size, "Mini-batch size")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--lr", t.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--hidden", t.hidden, "Hidden width")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_loss_flags(CLI::App* sub, TrainOptions& t, bool scalar_tau_beta) {
  if (scalar_tau_beta) {
    sub->add_option("--tau", t.tau, "Distillation temperature")->capture_default_str();
    sub->add_option("--beta", t.beta, "Weight of the distillation term")->capture_default_str();
  }
  sub->add_option("--alpha", t.alpha, "Teacher share of the smoothed target")->capture_default_str();
  sub->add_option("--kl-tau-squared", t.kl_tau_squared, "Scale the KL term by tau^2")
      ->capture_default_str();
  sub->add_option("--ce-temperature", t.ce_temperature,
                  "Temperature of the hard-label CE term: unit or tau")
      ->capture_default_str()
      ->check(CLI::IsMember({"unit", "tau"}));
}

void add_data_dir(CLI::App* sub, DataOptions& d) {
  sub->add_option("--data-dir", d.data_dir, "Directory with train/test_iid/test_ood .jsonl files")
      ->required();
}

std::vector<std::string> split_list_inputs(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const std::string& r : raw) {
    std::stringstream ss(r);
    std::string piece;
    while (std::getline(ss, piece, ',')) {
      if (!piece.empty()) out.push_back(piece);
    }
  }
  return out;
}

template <class T>
std::vector<T> parse_list(const std::vector<std::string>& raw, const std::string& flag) {
  std::vector<T> out;
  for (const std::string& s : split_list_inputs(raw)) {
    T v{};
    if (!CLI::detail::lexical_cast(s, v)) throw kdar::ConfigError(flag + ": cannot parse '" + s + "'");
    out.push_back(v);
  }
  if (out.empty()) throw kdar::ConfigError(flag + ": list is empty");
  return out;
}

kdar::MlpParams load_teacher(const std::string& path, const kdar::Dataset& train) {
  kdar::MlpParams t = kdar::load_checkpoint(path);
  const kdar::ModelDims want = train.spec.model_dims(t.dims.hidden);
  if (!(t.dims == want)) {
    throw kdar::ConfigError(path + ": teacher dims " + t.dims.to_string() +
                            " do not match dataset dims " + want.to_string());
  }
  return t;
}

std::string hash_hex(const kdar::MlpParams& p) {
  return kdar::hex64(kdar::content_hash(kdar::checkpoint_bytes(p)));
}

// ---------------------------------------------------------------------------
// Commands

struct GenDataOptions {
  std::string out_dir;
  kdar::SyntheticSpec spec;
  std::string shift_mode = "inverted";
};

int cmd_gen_data(GenDataOptions& o) {
  o.spec.shift_mode = kdar::parse_shift_mode(o.shift_mode);
  o.spec.validate();
  const std::string dir = resolve_out_dir(o.out_dir, "gen-data");
  ensure_dir(dir);

  Manifest m;
  m.command = "gen-data";
  m.seed = o.spec.seed;
  json cfg = kdar::to_json(o.spec);
  m.config = json::object();
  for (const auto& [k, v] : cfg.items()) {
    std::string key = k;
    std::replace(key.begin(), key.end(), '_', '-');
    m.config[key] = v;
  }
  m.config["out-dir"] = dir;

  const kdar::GeneratedBenchmark bm = kdar::generate(o.spec);
  for (const kdar::Dataset* ds : {&bm.train, &bm.test_ood, &bm.test_iid}) {
    const std::string name = kdar::to_string(ds->split);
    const std::string path = join(dir, name + ".jsonl");
    kdar::save_jsonl(*ds, path);
    m.outputs[name] = path;
  }
  m.extra["fingerprint"] = kdar::hex64(kdar::fingerprint(o.spec));
  m.write(dir, "ok");
  std::cout << "wrote " << bm.train.size() << " train, " << bm.test_ood.size() << " test_ood, "
            << bm.test_iid.size() << " test_iid samples to " << dir << '\n';
  return kExitOk;
}

struct TrainCommandOptions {
  DataOptions data;
  TrainOptions train;
  std::string out_dir;
  std::string teacher;
  std::uint64_t seed = 0;
};

int finish_training(const std::string& command, const std::string& ckpt_name,
                    const std::string& dir, Manifest& m, const kdar::TrainResult& r) {
  const std::string ckpt = join(dir, ckpt_name);
  const std::string hist = join(dir, "history.csv");
  kdar::save_checkpoint(r.params, ckpt);
  std::ostringstream csv;
  kdar::write_history_csv(csv, r.history);
  write_text(hist, csv.str());
  m.outputs = {{"checkpoint", ckpt}, {"history", hist}};
  m.extra["checkpoint_hash"] = hash_hex(r.params);
  m.write(dir, "ok");

  const kdar::EpochRecord& last = r.history.epochs.back();
  std::printf("%s: %zu epochs, loss %.4f, acc train %.4f iid %.4f ood %.4f -> %s\n",
              command.c_str(), last.epoch, last.loss_total, last.acc_train,
              last.acc_iid.value_or(0.0), last.acc_ood.value_or(0.0), ckpt.c_str());
  return kExitOk;
}

int cmd_train_teacher(TrainCommandOptions& o) {
  kdar::TrainConfig cfg = o.train.to_config(o.seed);
  cfg.loss_mode = kdar::LossMode::bce_only;
  cfg.validate();
  const std::string dir = resolve_out_dir(o.out_dir, "train-teacher");
  const kdar::Dataset train = o.data.load("train");
  const kdar::Dataset iid = o.data.load("test_iid");
  const kdar::Dataset ood = o.data.load("test_ood");
  ensure_dir(dir);

  Manifest m;
  m.command = "train-teacher";
  m.seed = o.seed;
  m.config = o.train.common_json();
  m.config["data-dir"] = o.data.data_dir;
  m.config["out-dir"] = dir;
  m.config["seed"] = o.seed;
  m.config["teacher-reweight"] = o.train.teacher_reweight;
  m.inputs = {{"train", o.data.path("train")},
              {"test_iid", o.data.path("test_iid")},
              {"test_ood", o.data.path("test_ood")}};
  const kdar::TrainResult r = kdar::train_teacher(train, cfg, {&iid, &ood});
  return finish_training("train-teacher", "teacher.ckpt", dir, m, r);
}

int cmd_train_student(TrainCommandOptions& o) {
  kdar::TrainConfig cfg = o.train.to_config(o.seed);
  cfg.validate();
  if (kdar::needs_teacher(cfg.loss_mode) && o.teacher.empty()) {
    throw kdar::ConfigError(std::string("--loss-mode ") + kdar::to_string(cfg.loss_mode) +
                            " requires --teacher");
  }
  const std::string dir = resolve_out_dir(o.out_dir, "train-student");
  const kdar::Dataset train = o.data.load("train");
  const kdar::Dataset iid = o.data.load("test_iid");
  const kdar::Dataset ood = o.data.load("test_ood");

  std::optional<kdar::MlpParams> teacher;
  if (kdar::needs_teacher(cfg.loss_mode)) teacher = load_teacher(o.teacher, train);
  ensure_dir(dir);

  Manifest m;
  m.command = "train-student";
  m.seed = o.seed;
  m.config = o.train.common_json();
  o.train.merge_loss_json(m.config);
  m.config["loss-mode"] = o.train.loss_mode;
  m.config["tau"] = o.train.tau;
  m.config["beta"] = o.train.beta;
  m.config["data-dir"] = o.data.data_dir;
  m.config["out-dir"] = dir;
  m.config["seed"] = o.seed;
  m.config["teacher"] = o.teacher;
  m.inputs = {{"train", o.data.path("train")},
              {"test_iid", o.data.path("test_iid")},
              {"test_ood", o.data.path("test_ood")}};
  if (teacher) {
    m.inputs["teacher"] = o.teacher;
    m.extra["teacher_hash"] = hash_hex(*teacher);
  }

  const kdar::TrainResult r =
      kdar::train_student(train, teacher ? &*teacher : nullptr, cfg, {&iid, &ood});
  return finish_training("train-student", "student.ckpt", dir, m, r);
}

struct EvalOptions {
  std::string checkpoint;
  std::string data_dir;
  std::vector<std::string> datasets;
  std::string prior;
  std::string out_dir;
};

int cmd_eval(EvalOptions& o) {
  std::erase(o.datasets, std::string());
  if (o.datasets.empty() && o.data_dir.empty()) {
    throw kdar::ConfigError("eval needs --data-dir or at least one --dataset");
  }
  std::vector<std::pair<std::string, std::string>> targets;  // label, path
  if (o.datasets.empty()) {
    for (const char* s : {"test_iid", "test_ood"}) targets.emplace_back(s, join(o.data_dir, std::string(s) + ".jsonl"));
  } else {
    for (const std::string& p : o.datasets) targets.emplace_back(fs::path(p).stem().string(), p);
  }
  std::string prior_path = o.prior;
  if (prior_path.empty()) {
    if (o.data_dir.empty()) throw kdar::ConfigError("eval needs --prior when --data-dir is not given");
    prior_path = join(o.data_dir, "train.jsonl");
  }

  const kdar::Dataset prior_ds = kdar::load_jsonl(prior_path);
  const kdar::PriorTable prior = kdar::prior_histogram(prior_ds);
  const kdar::MlpParams params = kdar::load_checkpoint(o.checkpoint);

  const std::string dir = resolve_out_dir(o.out_dir, "eval");
  std::vector<std::pair<std::string, kdar::MetricsReport>> reports;
  std::size_t n_qtypes = prior_ds.spec.n_qtypes;
  for (const auto& [label, path] : targets) {
    const kdar::Dataset ds = kdar::load_jsonl(path);
    if (ds.n_classes() != params.dims.classes || ds.spec.d_v != params.dims.visual ||
        ds.spec.d_q != params.dims.question) {
      throw kdar::ConfigError(path + ": dataset dims " + ds.spec.model_dims(params.dims.hidden).to_string() +
                              " do not match checkpoint dims " + params.dims.to_string());
    }
    n_qtypes = std::max(n_qtypes, ds.spec.n_qtypes);
    reports.emplace_back(label, kdar::evaluate(params, ds, prior));
  }
  ensure_dir(dir);

  std::string csv = kdar::metrics_csv_header(n_qtypes) + "\n";
  for (const auto& [label, r] : reports) {
    csv += kdar::metrics_csv_row(label, r, n_qtypes) + "\n";
    kdar::print_metrics_table(std::cout, label, r);
  }
  const std::string csv_path = join(dir, "metrics.csv");
  write_text(csv_path, csv);

  Manifest m;
  m.command = "eval";
  m.config = {{"checkpoint", o.checkpoint},
              {"data-dir", o.data_dir},
              {"dataset", o.datasets},
              {"prior", prior_path},
              {"out-dir", dir}};
  m.inputs = {{"checkpoint", o.checkpoint}, {"prior", prior_path}};
  for (const auto& [label, path] : targets) m.inputs[label] = path;
  m.outputs = {{"metrics", csv_path}};
  m.extra["checkpoint_hash"] = hash_hex(params);
  if (reports.size() == 2 && reports[0].first == "test_iid" && reports[1].first == "test_ood") {
    const double gap = kdar::ood_gap(reports[0].second, reports[1].second);
    m.extra["ood_gap"] = gap;
    std::printf("ood gap (iid - ood): %.4f\n", gap);
  }
  m.write(dir, "ok");
  return kExitOk;
}

struct GridOptions {
  DataOptions data;
  TrainOptions train;
  std::string out_dir;
  std::string teacher;
  std::vector<std::string> betas{"1", "3", "5"};
  std::vector<std::string> taus{"1", "2.5", "5", "10"};
  std::vector<std::string> seeds{"0", "1", "2"};
  std::size_t parallel = 1;
};

struct LoadedExperiment {
  kdar::Dataset train, iid, ood;
  kdar::MlpParams teacher;

  kdar::ExperimentData data() const { return {&train, &iid, &ood}; }
};

LoadedExperiment load_experiment(const GridOptions& o) {
  if (o.teacher.empty()) throw kdar::ConfigError("--teacher is required");
  LoadedExperiment e{o.data.load("train"), o.data.load("test_iid"), o.data.load("test_ood"), {}};
  e.teacher = load_teacher(o.teacher, e.train);
  return e;
}

json grid_config(const GridOptions& o, const std::string& dir) {
  json c = o.train.common_json();
  o.train.merge_loss_json(c);
  c["data-dir"] = o.data.data_dir;
  c["out-dir"] = dir;
  c["teacher"] = o.teacher;
  c["parallel"] = o.parallel;
  return c;
}

int cmd_sweep(GridOptions& o) {
  const auto betas = parse_list<double>(o.betas, "--beta");
  const auto taus = parse_list<double>(o.taus, "--tau");
  const auto seeds = parse_list<std::uint64_t>(o.seeds, "--seed");
  const auto cells = kdar::sweep_grid(betas, taus, seeds);
  kdar::TrainConfig base = o.train.to_config(0);
  base.loss_mode = kdar::LossMode::kdar;
  base.validate();
  const std::string dir = resolve_out_dir(o.out_dir, "sweep");
  const LoadedExperiment e = load_experiment(o);
  ensure_dir(dir);

  Manifest m;
  m.command = "sweep";
  m.seed = seeds.front();
  m.config = grid_config(o, dir);
  m.config["beta"] = betas;
  m.config["tau"] = taus;
  m.config["seed"] = seeds;
  m.inputs = {{"teacher", o.teacher}, {"train", o.data.path("train")}};
  const std::string before = hash_hex(e.teacher);

  const std::string csv_path = join(dir, "sweep.csv");
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw kdar::IoError("cannot write '" + csv_path + "'");
  csv << kdar::kSweepCsvHeader << '\n' << std::flush;

  json failures = json::array();
  std::size_t done = 0;
  kdar::run_ordered(
      cells.size(), o.parallel,
      [&](std::size_t i) { return kdar::run_sweep_cell(e.data(), e.teacher, base, cells[i]); },
      [&](std::size_t, const kdar::SweepOutcome& r) {
        csv << kdar::sweep_csv_row(r) << '\n' << std::flush;
        ++done;
        if (!r.ok) {
          failures.push_back({{"beta", r.cell.beta}, {"tau", r.cell.tau}, {"seed", r.cell.seed},
                              {"error", r.error}});
          std::cerr << "cell beta=" << r.cell.beta << " tau=" << r.cell.tau << " seed=" << r.cell.seed
                    << " failed: " << r.error << '\n';
        } else {
          std::printf("[%zu/%zu] beta=%g tau=%g seed=%llu acc_ood=%.4f acc_iid=%.4f\n", done,
                      cells.size(), r.cell.beta, r.cell.tau,
                      static_cast<unsigned long long>(r.cell.seed), r.acc.acc_ood, r.acc.acc_iid);
          std::fflush(stdout);
        }
      });

  m.outputs = {{"sweep", csv_path}};
  m.extra["failures"] = failures;
  m.extra["teacher_hash"] = before;
  m.extra["teacher_unchanged"] = hash_hex(e.teacher) == before;
  m.write(dir, failures.empty() ? "ok" : "completed_with_failures");
  return failures.empty() ? kExitOk : kExitFailures;
}

int cmd_ablate(GridOptions& o) {
  const auto seeds = parse_list<std::uint64_t>(o.seeds, "--seed");
  kdar::TrainConfig base = o.train.to_config(0);
  base.validate();
  const auto jobs = kdar::ablation_jobs(seeds);
  const std::string dir = resolve_out_dir(o.out_dir, "ablate");
  const LoadedExperiment e = load_experiment(o);
  ensure_dir(dir);

  Manifest m;
  m.command = "ablate";
  m.seed = seeds.front();
  m.config = grid_config(o, dir);
  m.config["tau"] = o.train.tau;
  m.config["beta"] = o.train.beta;
  m.config["seed"] = seeds;
  m.inputs = {{"teacher", o.teacher}, {"train", o.data.path("train")}};
  const std::string before = hash_hex(e.teacher);

  const std::string runs_path = join(dir, "ablate_runs.csv");
  std::ofstream runs_csv(runs_path, std::ios::trunc);
  if (!runs_csv) throw kdar::IoError("cannot write '" + runs_path + "'");
  runs_csv << kdar::kAblationRunsCsvHeader << '\n' << std::flush;

  std::vector<kdar::AblationRun> runs;
  kdar::run_ordered(
      jobs.size(), o.parallel,
      [&](std::size_t i) { return kdar::run_ablation_job(e.data(), e.teacher, base, jobs[i]); },
      [&](std::size_t, const kdar::AblationRun& r) {
        runs_csv << kdar::ablation_run_csv_row(r) << '\n' << std::flush;
        runs.push_back(r);
        std::printf("%-8s seed=%llu acc_ood=%.4f acc_iid=%.4f\n", kdar::to_string(r.mode),
                    static_cast<unsigned long long>(r.seed), r.acc.acc_ood, r.acc.acc_iid);
        std::fflush(stdout);
      });

  std::string csv = std::string(kdar::kAblationCsvHeader) + "\n";
  for (const auto& s : kdar::summarize_ablation(runs)) csv += kdar::ablation_csv_row(s) + "\n";
  const std::string csv_path = join(dir, "ablate.csv");
  write_text(csv_path, csv);
  std::cout << csv;

  const bool unchanged = hash_hex(e.teacher) == before;
  m.outputs = {{"ablate", csv_path}, {"runs", runs_path}};
  m.extra["teacher_hash"] = before;
  m.extra["teacher_unchanged"] = unchanged;
  m.write(dir, "ok");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KDAR: distillation with adaptive reweighting on a synthetic long-tailed benchmark"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.set_config("--config,--spec", "", "JSON file whose keys mirror the subcommand flags; flags win");

  // gen-data
  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate train/test_ood/test_iid JSONL splits");
  gen_cmd->add_option("--out-dir", gen.out_dir, "Output directory");
  gen_cmd->add_option("--seed", gen.spec.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--n-qtypes", gen.spec.n_qtypes)->capture_default_str();
  gen_cmd->add_option("--n-answers-per-type", gen.spec.n_answers_per_type)->capture_default_str();
  gen_cmd->add_option("--skew", gen.spec.skew, "Train prior exponent (>= 1)")->capture_default_str();
  gen_cmd->add_option("--shift-mode", gen.shift_mode, "inverted or uniform")
      ->capture_default_str()
      ->check(CLI::IsMember({"inverted", "uniform"}));
  gen_cmd->add_option("--d-v", gen.spec.d_v)->capture_default_str();
  gen_cmd->add_option("--d-q", gen.spec.d_q)->capture_default_str();
  gen_cmd->add_option("--noise-sigma", gen.spec.noise_sigma)->capture_default_str();
  gen_cmd->add_option("--prototype-scale", gen.spec.prototype_scale)->capture_default_str();
  gen_cmd->add_option("--n-train", gen.spec.n_train)->capture_default_str();
  gen_cmd->add_option("--n-test", gen.spec.n_test)->capture_default_str();
  gen_cmd->add_option("--annotator-count-max", gen.spec.annotator_count_max)->capture_default_str();

  // train-teacher / train-student
  TrainCommandOptions teach, stud;
  auto* teach_cmd = app.add_subcommand("train-teacher", "Train the reweighted BCE teacher");
  add_data_dir(teach_cmd, teach.data);
  teach_cmd->add_option("--out-dir", teach.out_dir, "Output directory");
  teach_cmd->add_option("--seed", teach.seed, "Init and shuffle seed")->capture_default_str();
  add_common_train_flags(teach_cmd, teach.train);
  teach_cmd->add_option("--teacher-reweight", teach.train.teacher_reweight,
                        "Inverse-frequency sample weights")
      ->capture_default_str();

  auto* stud_cmd = app.add_subcommand("train-student", "Train a student against the frozen teacher");
  add_data_dir(stud_cmd, stud.data);
  stud_cmd->add_option("--out-dir", stud.out_dir, "Output directory");
  stud_cmd->add_option("--seed", stud.seed, "Init and shuffle seed")->capture_default_str();
  stud_cmd->add_option("--teacher", stud.teacher, "Teacher checkpoint");
  stud_cmd->add_option("--loss-mode", stud.train.loss_mode, "bce_only, apt_only, kd_only or kdar")
      ->capture_default_str()
      ->check(CLI::IsMember({"bce_only", "apt_only", "kd_only", "kdar"}));
  add_common_train_flags(stud_cmd, stud.train);
  add_loss_flags(stud_cmd, stud.train, true);

  // eval
  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on one or more splits");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--data-dir", ev.data_dir, "Score test_iid and test_ood from this directory");
  eval_cmd->add_option("--dataset", ev.datasets, "Explicit JSONL split (repeatable)");
  eval_cmd->add_option("--prior", ev.prior, "Train split defining the head answers");
  eval_cmd->add_option("--out-dir", ev.out_dir, "Output directory");

  // sweep / ablate
  GridOptions sw, ab;
  ab.seeds = {"0", "1", "2", "3", "4"};
  auto* sweep_cmd = app.add_subcommand("sweep", "Beta x tau x seed grid of kdar students");
  add_data_dir(sweep_cmd, sw.data);
  sweep_cmd->add_option("--teacher", sw.teacher, "Teacher checkpoint")->required();
  sweep_cmd->add_option("--out-dir", sw.out_dir, "Output directory");
  sweep_cmd->add_option("--beta", sw.betas, "Comma-separated beta values")->capture_default_str();
  sweep_cmd->add_option("--tau", sw.taus, "Comma-separated tau values")->capture_default_str();
  sweep_cmd->add_option("--seed", sw.seeds, "Comma-separated seeds")->capture_default_str();
  sweep_cmd->add_option("--parallel", sw.parallel, "Concurrent cells")->capture_default_str();
  add_common_train_flags(sweep_cmd, sw.train);
  add_loss_flags(sweep_cmd, sw.train, false);

  auto* abl_cmd = app.add_subcommand("ablate", "Run all four loss modes over several seeds");
  add_data_dir(abl_cmd, ab.data);
  abl_cmd->add_option("--teacher", ab.teacher, "Teacher checkpoint")->required();
  abl_cmd->add_option("--out-dir", ab.out_dir, "Output directory");
  abl_cmd->add_option("--seed", ab.seeds, "Comma-separated seeds")->capture_default_str();
  abl_cmd->add_option("--parallel", ab.parallel, "Concurrent runs")->capture_default_str();
  add_common_train_flags(abl_cmd, ab.train);
  add_loss_flags(abl_cmd, ab.train, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*teach_cmd) return cmd_train_teacher(teach);
    if (*stud_cmd) return cmd_train_student(stud);
    if (*eval_cmd) return cmd_eval(ev);
    if (*sweep_cmd) return cmd_sweep(sw);
    if (*abl_cmd) return cmd_ablate(ab);
  } catch (const kdar::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailures;
  } catch (const kdar::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
