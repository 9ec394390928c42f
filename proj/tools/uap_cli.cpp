// uap: train recurrent RUL models, compute universal adversarial
// perturbations against them and report their effect.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uap/uap.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct Failure {
  int code;
  std::string message;
};

[[noreturn]] void usage_error(const std::string& msg) { throw Failure{kExitUsage, msg}; }

void check(uap_status st) {
  if (st == UAP_OK) return;
  const int code = st == UAP_E_NUMERIC ? kExitNumeric : (st == UAP_E_INTERNAL ? kExitInternal : kExitUsage);
  throw Failure{code, uap_last_error()};
}

bool quiet() {
  const char* lvl = std::getenv("UAP_LOG");
  return lvl != nullptr && std::string(lvl) == "error";
}

void summary(const std::string& line) {
  if (!quiet()) std::fprintf(stderr, "uap: %s\n", line.c_str());
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// splitmix64 over the seed mixed with an FNV-1a hash of the purpose name.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Handles freed on scope exit.
template <class T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  Handle(Handle&& o) noexcept : ptr(o.ptr) { o.ptr = nullptr; }
  Handle& operator=(Handle&& o) noexcept {
    std::swap(ptr, o.ptr);
    return *this;
  }
  ~Handle() { Free(ptr); }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};

using Dataset = Handle<uap_dataset, uap_dataset_free>;
using Model = Handle<uap_model, uap_model_free>;
using Pert = Handle<uap_perturbation, uap_perturbation_free>;
using Report = Handle<uap_report, uap_report_free>;
using Sweep = Handle<uap_sweep, uap_sweep_free>;

// ---------------------------------------------------------------------------
// Configuration: flag > config file > default.

struct Flags {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<double> epsilon;
  std::optional<double> alpha;
  std::optional<double> rfool;
  std::optional<std::size_t> efool;
  std::optional<std::string> arch;
  std::vector<std::string> checkpoints;
  std::vector<std::string> perturbations;
};

struct Settings {
  std::string train_path, test_path, rul_path;
  bool synthetic = false;
  std::optional<std::uint64_t> synth_seed;
  std::size_t n_train = 100;
  std::size_t n_test = 100;
  std::size_t window = 80;
  double rul_cap = -1.0;

  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out = "out";

  std::string arch = "lstm";
  std::size_t hidden_dim = 32;
  uap_train_config train{};
  uap_attack_config attack{};
  std::vector<double> epsilons{1e-4, 1e-3, 1e-2, 1e-1};
};

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) usage_error("config: '" + where + "' must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) usage_error("config: unknown key '" + where + "." + k + "'");
  }
}

template <class T>
void read_opt(const json& obj, const char* key, T& dst, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return;
  try {
    if constexpr (requires { typename T::value_type; dst.has_value(); }) {
      dst = obj.at(key).get<typename T::value_type>();
    } else {
      dst = obj.at(key).get<T>();
    }
  } catch (const json::exception&) {
    usage_error("config: '" + where + "." + key + "' has the wrong type");
  }
}

Settings resolve(const Flags& f) {
  Settings s;
  uap_train_config_default(&s.train);
  uap_attack_config_default(&s.attack);
  bool attack_seed_set = false;
  bool train_seed_set = false;

  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) usage_error("cannot read config file " + f.config);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      usage_error("config " + f.config + " is not valid JSON: " + e.what());
    }
    reject_unknown(j, "config", {"data", "model", "attack", "sweep", "seed", "jobs", "out"});
    read_opt(j, "seed", s.seed, "config");
    read_opt(j, "jobs", s.jobs, "config");
    read_opt(j, "out", s.out, "config");
    if (j.contains("data")) {
      const json& d = j.at("data");
      reject_unknown(d, "data", {"train", "test", "rul", "synthetic", "window", "rul_cap"});
      read_opt(d, "train", s.train_path, "data");
      read_opt(d, "test", s.test_path, "data");
      read_opt(d, "rul", s.rul_path, "data");
      read_opt(d, "window", s.window, "data");
      read_opt(d, "rul_cap", s.rul_cap, "data");
      const bool any_path = d.contains("train") || d.contains("test") || d.contains("rul");
      if (d.contains("synthetic")) {
        if (any_path) usage_error("config: give either data paths or a synthetic block, not both");
        const json& sy = d.at("synthetic");
        reject_unknown(sy, "data.synthetic", {"seed", "n_train", "n_test"});
        s.synthetic = true;
        read_opt(sy, "seed", s.synth_seed, "data.synthetic");
        read_opt(sy, "n_train", s.n_train, "data.synthetic");
        read_opt(sy, "n_test", s.n_test, "data.synthetic");
      } else if (any_path) {
        if (s.train_path.empty() || s.test_path.empty() || s.rul_path.empty()) {
          usage_error("config: data needs all of 'train', 'test' and 'rul'");
        }
        // Relative paths are taken from the config file's directory.
        const fs::path base = fs::path(f.config).parent_path();
        for (auto* p : {&s.train_path, &s.test_path, &s.rul_path}) {
          if (fs::path(*p).is_relative()) *p = (base / *p).string();
        }
      }
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      reject_unknown(m, "model", {"arch", "hidden_dim", "epochs", "learning_rate", "batch_size",
                                  "clip_norm", "seed"});
      read_opt(m, "arch", s.arch, "model");
      read_opt(m, "hidden_dim", s.hidden_dim, "model");
      read_opt(m, "epochs", s.train.epochs, "model");
      read_opt(m, "learning_rate", s.train.learning_rate, "model");
      read_opt(m, "batch_size", s.train.batch_size, "model");
      read_opt(m, "clip_norm", s.train.clip_norm, "model");
      train_seed_set = m.contains("seed");
      read_opt(m, "seed", s.train.seed, "model");
    }
    if (j.contains("attack")) {
      const json& a = j.at("attack");
      reject_unknown(a, "attack", {"epsilon", "alpha", "r_fool", "e_fool", "inner_step",
                                   "inner_max_iters", "clamp_inputs", "seed"});
      read_opt(a, "epsilon", s.attack.epsilon, "attack");
      read_opt(a, "alpha", s.attack.alpha, "attack");
      read_opt(a, "r_fool", s.attack.r_fool, "attack");
      read_opt(a, "e_fool", s.attack.e_fool, "attack");
      read_opt(a, "inner_step", s.attack.inner_step, "attack");
      read_opt(a, "inner_max_iters", s.attack.inner_max_iters, "attack");
      bool clamp = false;
      read_opt(a, "clamp_inputs", clamp, "attack");
      s.attack.clamp_inputs = clamp ? 1 : 0;
      attack_seed_set = a.contains("seed");
      read_opt(a, "seed", s.attack.seed, "attack");
    }
    if (j.contains("sweep")) {
      const json& sw = j.at("sweep");
      reject_unknown(sw, "sweep", {"epsilons"});
      read_opt(sw, "epsilons", s.epsilons, "sweep");
    }
  }

  if (f.seed) s.seed = *f.seed;
  if (f.jobs) s.jobs = *f.jobs;
  if (f.out) s.out = *f.out;
  if (f.arch) s.arch = *f.arch;
  if (f.epsilon) s.attack.epsilon = *f.epsilon;
  if (f.alpha) s.attack.alpha = *f.alpha;
  if (f.rfool) s.attack.r_fool = *f.rfool;
  if (f.efool) s.attack.e_fool = *f.efool;

  if (s.jobs < 1) usage_error("jobs must be >= 1");
  if (s.train_path.empty()) s.synthetic = true;
  if (!s.synth_seed) s.synth_seed = derive_seed(s.seed, "synth");
  if (!train_seed_set) s.train.seed = derive_seed(s.seed, "train");
  if (!attack_seed_set) s.attack.seed = derive_seed(s.seed, "shuffle");
  return s;
}

fs::path out_dir(const Settings& s) {
  std::error_code ec;
  fs::create_directories(s.out, ec);
  if (ec) usage_error("cannot create output directory " + s.out + ": " + ec.message());
  return s.out;
}

Dataset load_data(const Settings& s) {
  Dataset ds;
  if (s.synthetic) {
    check(uap_dataset_synthetic(*s.synth_seed, s.n_train, s.n_test, s.window, s.rul_cap, ds.out()));
  } else {
    for (const auto* p : {&s.train_path, &s.test_path, &s.rul_path}) {
      if (!fs::exists(*p)) usage_error("data file not found: " + *p);
    }
    check(uap_dataset_load(s.train_path.c_str(), s.test_path.c_str(), s.rul_path.c_str(), s.window,
                           s.rul_cap, ds.out()));
  }
  uap_dataset_info info{};
  check(uap_dataset_info_get(ds.get(), &info));
  summary("data: " + std::to_string(info.n_train) + " train / " + std::to_string(info.n_test) +
          " test windows, " + std::to_string(info.features) + " of " +
          std::to_string(info.raw_features) + " sensors kept" +
          (s.synthetic ? " (synthetic, seed " + std::to_string(*s.synth_seed) + ")" : ""));
  return ds;
}

Model load_model(const std::string& path, std::size_t jobs) {
  if (!fs::exists(path)) usage_error("checkpoint not found: " + path);
  Model m;
  check(uap_model_load(path.c_str(), m.out()));
  check(uap_model_set_jobs(m.get(), jobs));
  return m;
}

Pert load_pert(const std::string& path) {
  if (!fs::exists(path)) usage_error("perturbation not found: " + path);
  Pert p;
  check(uap_perturbation_load(path.c_str(), p.out()));
  return p;
}

std::string arch_of(const Model& m) {
  uap_model_info info{};
  check(uap_model_info_get(m.get(), &info));
  return info.arch;
}

std::string report_line(const uap_report* r, std::size_t i) {
  uap_report_summary s{};
  check(uap_report_get(r, i, &s));
  return std::string(s.model) + " / " + s.attack + ": fooling " + fixed2(s.fooling_pct) +
         "%, MAPE " + fixed2(s.mape) + " over " + std::to_string(s.n_samples) + " windows (" +
         std::to_string(s.n_excluded) + " excluded)";
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_synth(const Settings& s) {
  const fs::path dir = out_dir(s);
  check(uap_synth_write(*s.synth_seed, s.n_train, s.n_test, dir.string().c_str()));
  summary("synth: wrote train_FD001.txt, test_FD001.txt, RUL_FD001.txt to " + dir.string());
}

void cmd_train(const Settings& s) {
  const fs::path dir = out_dir(s);
  Dataset ds = load_data(s);
  Model m;
  check(uap_model_train(ds.get(), s.arch.c_str(), s.hidden_dim, derive_seed(s.seed, "init"),
                        &s.train, m.out()));
  const std::string arch = arch_of(m);
  const fs::path ckpt = dir / ("model_" + arch + ".json");
  check(uap_model_save(m.get(), ckpt.string().c_str()));

  std::size_t n = 0;
  check(uap_model_loss_history(m.get(), nullptr, 0, &n));
  std::vector<double> hist(n);
  check(uap_model_loss_history(m.get(), hist.data(), n, &n));
  std::string csv = "epoch,loss\n";
  for (std::size_t i = 0; i < n; ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, hist[i]);
    csv += buf;
  }
  std::ofstream(dir / ("loss_" + arch + ".csv"), std::ios::binary) << csv;
  char buf[128];
  std::snprintf(buf, sizeof buf, "train: %s loss %.6g -> %.6g over %zu epochs -> ", arch.c_str(),
                n ? hist.front() : 0.0, n ? hist.back() : 0.0, n);
  summary(buf + ckpt.string());
}

void cmd_attack(const Settings& s, const Flags& f) {
  if (f.checkpoints.size() != 1) usage_error("attack needs exactly one --checkpoint");
  const fs::path dir = out_dir(s);
  Dataset ds = load_data(s);
  Model m = load_model(f.checkpoints[0], s.jobs);
  Pert p;
  check(uap_attack_compute(m.get(), ds.get(), UAP_SPLIT_TRAIN, &s.attack, nullptr, nullptr, p.out()));
  const fs::path path = dir / ("uap_" + arch_of(m) + ".json");
  check(uap_perturbation_save(p.get(), path.string().c_str()));
  uap_perturbation_info info{};
  check(uap_perturbation_info_get(p.get(), &info));
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "attack: %s eps %g alpha %g, achieved fooling %.2f%% on train after %zu epoch(s), "
                "linf %g -> ",
                info.source_model, info.epsilon, info.alpha, 100.0 * info.achieved_fooling,
                info.epochs_run, info.linf);
  summary(buf + path.string());
}

void cmd_eval(const Settings& s, const Flags& f) {
  if (f.checkpoints.size() != 1) usage_error("eval needs exactly one --checkpoint");
  if (f.perturbations.size() > 1) usage_error("eval takes at most one --perturbation");
  const fs::path dir = out_dir(s);
  Dataset ds = load_data(s);
  Model m = load_model(f.checkpoints[0], s.jobs);
  Pert p;
  if (!f.perturbations.empty()) p = load_pert(f.perturbations[0]);
  const std::string arch = arch_of(m);
  Report r;
  check(uap_evaluate(m.get(), ds.get(), UAP_SPLIT_TEST, p.get(), s.attack.alpha,
                     s.attack.clamp_inputs, arch.c_str(), nullptr, r.out()));
  check(uap_report_write_csv(r.get(), (dir / "report.csv").string().c_str()));
  check(uap_report_write_json(r.get(), s.attack.alpha, (dir / "report.json").string().c_str()));
  check(uap_report_write_rows(r.get(), 0, 0, (dir / "trajectory.csv").string().c_str()));
  check(uap_report_write_rows(r.get(), 0, 1, (dir / "last_windows.csv").string().c_str()));
  if (p.get()) {
    check(uap_traces_write(ds.get(), UAP_SPLIT_TEST, 0, p.get(), s.attack.clamp_inputs,
                           (dir / "input_traces.csv").string().c_str()));
  }
  summary("eval: " + report_line(r.get(), 0));
}

void cmd_sweep(const Settings& s, const Flags& f) {
  if (f.checkpoints.size() != 1) usage_error("sweep needs exactly one --checkpoint");
  const fs::path dir = out_dir(s);
  Dataset ds = load_data(s);
  Model m = load_model(f.checkpoints[0], 1);
  Sweep sw;
  check(uap_sweep_run(m.get(), ds.get(), UAP_SPLIT_TRAIN, UAP_SPLIT_TEST, s.epsilons.data(),
                      s.epsilons.size(), &s.attack, s.jobs, sw.out()));
  check(uap_sweep_write_csv(sw.get(), (dir / "sweep.csv").string().c_str()));
  check(uap_sweep_write_json(sw.get(), (dir / "sweep.json").string().c_str()));
  for (std::size_t i = 0; i < uap_sweep_count(sw.get()); ++i) {
    double eps = 0, fool = 0, mape = 0;
    check(uap_sweep_get(sw.get(), i, &eps, &fool, &mape));
    char buf[128];
    std::snprintf(buf, sizeof buf, "sweep: eps %g fooling %.2f%% MAPE %.2f", eps, fool, mape);
    summary(buf);
  }
}

void cmd_transfer(const Settings& s, const Flags& f) {
  if (f.checkpoints.size() != 2 || f.perturbations.size() != 2) {
    usage_error("transfer needs two --checkpoint and two --perturbation arguments, in matching order");
  }
  const fs::path dir = out_dir(s);
  Dataset ds = load_data(s);
  Model a = load_model(f.checkpoints[0], s.jobs);
  Model b = load_model(f.checkpoints[1], s.jobs);
  Pert ua = load_pert(f.perturbations[0]);
  Pert ub = load_pert(f.perturbations[1]);
  std::string na = arch_of(a);
  std::string nb = arch_of(b);
  if (na == nb) {
    na += "-a";
    nb += "-b";
  }
  Report r;
  check(uap_transfer(a.get(), na.c_str(), ua.get(), b.get(), nb.c_str(), ub.get(), ds.get(),
                     UAP_SPLIT_TEST, s.attack.alpha, s.attack.clamp_inputs, r.out()));
  check(uap_report_write_csv(r.get(), (dir / "transfer.csv").string().c_str()));
  check(uap_report_write_json(r.get(), s.attack.alpha, (dir / "transfer.json").string().c_str()));
  for (std::size_t i = 0; i < uap_report_count(r.get()); ++i) {
    summary("transfer: " + report_line(r.get(), i));
  }
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory (default: out)");
  cmd->add_option("--seed", f.seed, "Top-level seed; sub-seeds are derived per purpose");
  cmd->add_option("--jobs", f.jobs, "Worker threads for evaluation")->check(CLI::PositiveNumber);
}

void add_attack_flags(CLI::App* cmd, Flags& f, bool with_epsilon) {
  if (with_epsilon) {
    cmd->add_option("--epsilon", f.epsilon, "L-infinity bound of the perturbation (default 0.01)");
  }
  cmd->add_option("--alpha", f.alpha, "Overprediction factor (default 0.1)");
  cmd->add_option("--rfool", f.rfool, "Target fooling ratio (default 0.99)");
  cmd->add_option("--efool", f.efool, "Maximum attack epochs (default 3)");
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* lvl = std::getenv("UAP_LOG"); lvl != nullptr && *lvl != '\0') {
    if (uap_set_log_level(lvl) != UAP_OK) {
      std::fprintf(stderr, "uap: %s\n", uap_last_error());
      return kExitUsage;
    }
  }

  CLI::App app{"Universal adversarial perturbations against recurrent RUL models"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "Write an FD001-shaped synthetic data set");
  add_common(synth, f);

  auto* train = app.add_subcommand("train", "Train a model and write its checkpoint");
  add_common(train, f);
  train->add_option("--arch", f.arch, "Model architecture: lstm or gru (default lstm)");

  auto* attack = app.add_subcommand("attack", "Compute a universal perturbation on the train split");
  add_common(attack, f);
  add_attack_flags(attack, f, true);
  attack->add_option("--checkpoint", f.checkpoints, "Model checkpoint")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a model on the test split, optionally attacked");
  add_common(eval, f);
  eval->add_option("--alpha", f.alpha, "Overprediction factor (default 0.1)");
  eval->add_option("--checkpoint", f.checkpoints, "Model checkpoint")->required();
  eval->add_option("--perturbation", f.perturbations, "Perturbation file");

  auto* sweep = app.add_subcommand("sweep", "Recompute and evaluate the perturbation per epsilon");
  add_common(sweep, f);
  add_attack_flags(sweep, f, false);
  sweep->add_option("--checkpoint", f.checkpoints, "Model checkpoint")->required();

  auto* transfer = app.add_subcommand("transfer", "Six-row cross-model transferability table");
  add_common(transfer, f);
  transfer->add_option("--alpha", f.alpha, "Overprediction factor (default 0.1)");
  transfer->add_option("--checkpoint", f.checkpoints, "Two model checkpoints (A then B)")
      ->expected(1, 2)->required();
  transfer->add_option("--perturbation", f.perturbations, "Perturbations computed on A then B")
      ->expected(1, 2)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const Settings s = resolve(f);
    if (synth->parsed()) cmd_synth(s);
    if (train->parsed()) cmd_train(s);
    if (attack->parsed()) cmd_attack(s, f);
    if (eval->parsed()) cmd_eval(s, f);
    if (sweep->parsed()) cmd_sweep(s, f);
    if (transfer->parsed()) cmd_transfer(s, f);
  } catch (const Failure& e) {
    std::fprintf(stderr, "uap: error: %s\n", e.message.c_str());
    return e.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "uap: error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitOk;
}
