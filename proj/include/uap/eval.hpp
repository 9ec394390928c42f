#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uap/attacks.hpp"
#include "uap/data.hpp"

namespace uap {

// 100 * |{i : pred_i > (1 + alpha) y_i}| / n. Labels must be positive.
double fooling_percentage(std::span<const double> preds, std::span<const double> labels,
                          double alpha);

// Mean of |pred_i - y_i| / y_i, times 100. Labels must be positive.
double mape(std::span<const double> preds, std::span<const double> labels);

struct ReportRow {
  int engine_id = 0;
  int end_cycle = 0;
  double y = 0.0;
  double pred_clean = 0.0;
  double pred_attacked = 0.0;
};

struct AttackReport {
  std::string model;
  std::string attack = "none";
  double fooling_pct = 0.0;
  double mape = 0.0;
  std::size_t n_samples = 0;   // windows with y > 0, one row each
  std::size_t n_excluded = 0;  // windows with y == 0
  std::vector<ReportRow> rows;
};

// Clean and attacked predictions over every window of `set`. With no
// perturbation the attacked column is the clean one.
AttackReport evaluate(const Regressor& model, const WindowSet& set,
                      const Perturbation* perturbation, double alpha, bool clamp = false,
                      const std::string& model_name = "", const std::string& attack_name = "");

struct Victim {
  std::string name;  // e.g. "lstm"
  Regressor model;
  Perturbation uap;  // computed against this model
};

// Rows (a, none), (a, U_a), (a, U_b), (b, none), (b, U_b), (b, U_a).
std::vector<AttackReport> transfer_matrix(const Victim& a, const Victim& b, const WindowSet& set,
                                          double alpha, bool clamp = false);

struct SweepRow {
  double epsilon = 0.0;
  double fooling_pct = 0.0;
  double mape = 0.0;
  double achieved_fooling = 0.0;  // on the attack split
  std::size_t epochs_run = 0;
};

struct SweepResult {
  std::string model;
  std::vector<SweepRow> rows;
};

inline const std::vector<double> kDefaultEpsilonGrid = {1e-4, 1e-3, 1e-2, 1e-1};

// A fresh UAP per epsilon (same seed) on `attack_set`, evaluated on
// `eval_set`. Sweep points run on up to `jobs` threads.
SweepResult epsilon_sweep(const Regressor& model, const WindowSet& attack_set,
                          const WindowSet& eval_set, std::span<const double> epsilons,
                          const AttackConfig& cfg, std::size_t jobs = 1);

// Per-window rows for one engine, ordered by cycle.
std::vector<ReportRow> trajectory_report(const Regressor& model, const WindowSet& set,
                                         int engine_id, std::span<const double> u,
                                         bool clamp = false);

// The last window of every engine in `set` (the per-engine fleet view).
std::vector<ReportRow> last_window_report(const AttackReport& report);

struct TraceRow {
  std::size_t step = 0;
  std::size_t feature = 0;
  double clean = 0.0;
  double attacked = 0.0;
};

// Clean against perturbed input values for one window.
std::vector<TraceRow> input_traces(const Window& window, std::size_t features,
                                   std::span<const double> u, bool clamp = false);

// CSV and JSON writers. Percentages use 2 decimals; predictions and labels
// use the shortest round-trip form.
std::string report_csv(std::span<const AttackReport> reports);
std::string rows_csv(std::span<const ReportRow> rows);  // trajectory schema
std::string sweep_csv(const SweepResult& sweep);
std::string traces_csv(std::span<const TraceRow> rows);
std::string reports_json(std::span<const AttackReport> reports, double alpha);
std::string sweep_json(const SweepResult& sweep, const AttackConfig& cfg);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace uap
