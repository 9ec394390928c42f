#include "uap/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

#include <json.hpp>

#include "uap/error.hpp"
#include "uap/format.hpp"
#include "uap/log.hpp"

namespace uap {

using json = nlohmann::json;

namespace {

void check_inputs(std::span<const double> preds, std::span<const double> labels, const char* what) {
  if (preds.size() != labels.size()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(preds.size()) +
                         " predictions for " + std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw DomainError(std::string(what) + ": no samples");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!(labels[i] > 0.0)) {
      throw DomainError(std::string(what) + ": label " + std::to_string(i) +
                        " is not positive; exclude zero-RUL windows first");
    }
    if (!std::isfinite(preds[i])) throw NumericError(std::string(what) + ": non-finite prediction");
  }
}

// Correctly rounded sum (Shewchuk partials), independent of term order.
double exact_sum(std::span<const double> xs) {
  std::vector<double> partials;
  for (double x : xs) {
    std::size_t k = 0;
    for (double y : partials) {
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[k++] = lo;
      x = hi;
    }
    partials.resize(k);
    partials.push_back(x);
  }
  std::size_t n = partials.size();
  if (n == 0) return 0.0;
  double hi = partials[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

}  // namespace

double fooling_percentage(std::span<const double> preds, std::span<const double> labels,
                          double alpha) {
  check_inputs(preds, labels, "fooling_percentage");
  std::size_t fooled = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] > (1.0 + alpha) * labels[i]) ++fooled;
  }
  return 100.0 * static_cast<double>(fooled) / static_cast<double>(preds.size());
}

double mape(std::span<const double> preds, std::span<const double> labels) {
  check_inputs(preds, labels, "mape");
  std::vector<double> terms(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) terms[i] = std::fabs(preds[i] - labels[i]) / labels[i];
  return 100.0 * exact_sum(terms) / static_cast<double>(preds.size());
}

AttackReport evaluate(const Regressor& model, const WindowSet& set,
                      const Perturbation* perturbation, double alpha, bool clamp,
                      const std::string& model_name, const std::string& attack_name) {
  if (set.empty()) throw DomainError("evaluate: empty data set");
  if (set.features != model.features || set.steps != model.steps) {
    throw DimensionError("evaluate: windows do not match the model input shape");
  }
  if (perturbation && (perturbation->steps != set.steps || perturbation->features != set.features)) {
    throw DimensionError("evaluate: perturbation shape [" + std::to_string(perturbation->steps) +
                         ", " + std::to_string(perturbation->features) + "] does not match windows [" +
                         std::to_string(set.steps) + ", " + std::to_string(set.features) + "]");
  }
  const auto clean = model.predict(perturbed_batch(set, {}));
  const auto attacked =
      perturbation ? model.predict(perturbed_batch(set, perturbation->u, clamp)) : clean;

  AttackReport rep;
  rep.model = model_name.empty() ? model.id : model_name;
  rep.attack = !attack_name.empty() ? attack_name : (perturbation ? perturbation->source_model : "none");
  std::vector<double> ys;
  std::vector<double> preds;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Window& w = set.windows[i];
    if (!(w.y > 0.0)) {
      ++rep.n_excluded;
      continue;
    }
    rep.rows.push_back({w.engine_id, w.end_cycle, w.y, clean[i], attacked[i]});
    ys.push_back(w.y);
    preds.push_back(attacked[i]);
  }
  rep.n_samples = rep.rows.size();
  if (rep.n_samples == 0) throw DomainError("evaluate: no window has a positive label");
  rep.fooling_pct = fooling_percentage(preds, ys, alpha);
  rep.mape = mape(preds, ys);
  return rep;
}

std::vector<AttackReport> transfer_matrix(const Victim& a, const Victim& b, const WindowSet& set,
                                          double alpha, bool clamp) {
  if (a.model.features != b.model.features || a.model.steps != b.model.steps) {
    throw DimensionError("transfer_matrix: models disagree on input shape");
  }
  std::vector<AttackReport> out;
  for (const auto* v : {&a, &b}) {
    const Victim& other = (v == &a) ? b : a;
    out.push_back(evaluate(v->model, set, nullptr, alpha, clamp, v->name, "none"));
    out.push_back(evaluate(v->model, set, &v->uap, alpha, clamp, v->name, v->name));
    out.push_back(evaluate(v->model, set, &other.uap, alpha, clamp, v->name, other.name));
  }
  return out;
}

SweepResult epsilon_sweep(const Regressor& model, const WindowSet& attack_set,
                          const WindowSet& eval_set, std::span<const double> epsilons,
                          const AttackConfig& cfg, std::size_t jobs) {
  if (epsilons.empty()) throw ConfigError("epsilon sweep needs at least one value");
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (!(epsilons[i] >= 0.0)) throw ConfigError("sweep epsilons must be >= 0");
    if (i > 0 && !(epsilons[i] > epsilons[i - 1])) {
      throw ConfigError("sweep epsilons must be strictly increasing");
    }
  }
  SweepResult res;
  res.model = model.id;
  res.rows.resize(epsilons.size());

  auto run_point = [&](std::size_t k) {
    AttackConfig c = cfg;
    c.epsilon = epsilons[k];
    SweepRow row;
    row.epsilon = epsilons[k];
    // The zero ball holds only U = 0.
    if (c.epsilon == 0.0) {
      const AttackReport rep = evaluate(model, eval_set, nullptr, c.alpha, c.clamp_inputs);
      row.fooling_pct = rep.fooling_pct;
      row.mape = rep.mape;
      row.achieved_fooling = check_fool(model, attack_set, {}, c.alpha, c.clamp_inputs);
    } else {
      const Perturbation p = uap_compute(model, attack_set, c);
      const AttackReport rep = evaluate(model, eval_set, &p, c.alpha, c.clamp_inputs);
      row.fooling_pct = rep.fooling_pct;
      row.mape = rep.mape;
      row.achieved_fooling = p.achieved_fooling;
      row.epochs_run = p.epochs_run;
    }
    res.rows[k] = row;
    log::info("sweep: epsilon " + fmt::shortest(row.epsilon) + " fooling " +
              fmt::fixed(row.fooling_pct) + "% mape " + fmt::fixed(row.mape));
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, epsilons.size()));
  if (workers == 1) {
    for (std::size_t k = 0; k < epsilons.size(); ++k) run_point(k);
    return res;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < epsilons.size(); k = next++) {
        try {
          run_point(k);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
  return res;
}

std::vector<ReportRow> trajectory_report(const Regressor& model, const WindowSet& set,
                                         int engine_id, std::span<const double> u, bool clamp) {
  WindowSet sub;
  sub.steps = set.steps;
  sub.features = set.features;
  for (const auto& w : set.windows) {
    if (w.engine_id == engine_id) sub.windows.push_back(w);
  }
  if (sub.empty()) {
    log::info("trajectory: engine " + std::to_string(engine_id) + " has no full window, skipped");
    return {};
  }
  const auto clean = model.predict(perturbed_batch(sub, {}));
  const auto attacked = u.empty() ? clean : model.predict(perturbed_batch(sub, u, clamp));
  std::vector<ReportRow> rows;
  rows.reserve(sub.size());
  for (std::size_t i = 0; i < sub.size(); ++i) {
    const Window& w = sub.windows[i];
    rows.push_back({w.engine_id, w.end_cycle, w.y, clean[i], attacked[i]});
  }
  return rows;
}

std::vector<ReportRow> last_window_report(const AttackReport& report) {
  std::map<int, ReportRow> last;
  for (const auto& r : report.rows) {
    auto it = last.find(r.engine_id);
    if (it == last.end() || r.end_cycle > it->second.end_cycle) last[r.engine_id] = r;
  }
  std::vector<ReportRow> out;
  out.reserve(last.size());
  for (const auto& [id, r] : last) out.push_back(r);
  return out;
}

std::vector<TraceRow> input_traces(const Window& window, std::size_t features,
                                   std::span<const double> u, bool clamp) {
  if (features == 0 || window.x.size() % features != 0) {
    throw DimensionError("input_traces: window does not split into " + std::to_string(features) +
                         " features");
  }
  const auto attacked = u.empty() ? window.x : apply_perturbation(window.x, u, clamp);
  std::vector<TraceRow> rows;
  rows.reserve(window.x.size());
  for (std::size_t i = 0; i < window.x.size(); ++i) {
    rows.push_back({i / features, i % features, window.x[i], attacked[i]});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Output

std::string report_csv(std::span<const AttackReport> reports) {
  std::string out = "model,attack,fooling_pct,mape,n_samples,n_excluded\n";
  for (const auto& r : reports) {
    out += r.model + "," + r.attack + "," + fmt::fixed(r.fooling_pct) + "," + fmt::fixed(r.mape) +
           "," + std::to_string(r.n_samples) + "," + std::to_string(r.n_excluded) + "\n";
  }
  return out;
}

std::string rows_csv(std::span<const ReportRow> rows) {
  std::string out = "engine_id,cycle,true_rul,pred_clean,pred_attacked\n";
  for (const auto& r : rows) {
    out += std::to_string(r.engine_id) + "," + std::to_string(r.end_cycle) + "," +
           fmt::shortest(r.y) + "," + fmt::shortest(r.pred_clean) + "," +
           fmt::shortest(r.pred_attacked) + "\n";
  }
  return out;
}

std::string sweep_csv(const SweepResult& sweep) {
  std::string out = "epsilon,fooling_pct,mape\n";
  for (const auto& r : sweep.rows) {
    out += fmt::shortest(r.epsilon) + "," + fmt::fixed(r.fooling_pct) + "," + fmt::fixed(r.mape) + "\n";
  }
  return out;
}

std::string traces_csv(std::span<const TraceRow> rows) {
  std::string out = "step,feature,clean,attacked\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + std::to_string(r.feature) + "," + fmt::shortest(r.clean) +
           "," + fmt::shortest(r.attacked) + "\n";
  }
  return out;
}

std::string reports_json(std::span<const AttackReport> reports, double alpha) {
  json j;
  j["alpha"] = alpha;
  j["reports"] = json::array();
  for (const auto& r : reports) {
    double mean_shift = 0.0;
    for (const auto& row : r.rows) mean_shift += row.pred_attacked - row.pred_clean;
    if (!r.rows.empty()) mean_shift /= static_cast<double>(r.rows.size());
    j["reports"].push_back({{"model", r.model},
                            {"attack", r.attack},
                            {"fooling_pct", r.fooling_pct},
                            {"mape", r.mape},
                            {"n_samples", r.n_samples},
                            {"n_excluded", r.n_excluded},
                            {"mean_prediction_shift", mean_shift}});
  }
  return j.dump(2) + "\n";
}

std::string sweep_json(const SweepResult& sweep, const AttackConfig& cfg) {
  json j;
  j["model"] = sweep.model;
  j["alpha"] = cfg.alpha;
  j["r_fool"] = cfg.r_fool;
  j["e_fool"] = cfg.e_fool;
  j["seed"] = cfg.seed;
  j["rows"] = json::array();
  for (const auto& r : sweep.rows) {
    j["rows"].push_back({{"epsilon", r.epsilon},
                         {"fooling_pct", r.fooling_pct},
                         {"mape", r.mape},
                         {"achieved_fooling", r.achieved_fooling},
                         {"epochs_run", r.epochs_run}});
  }
  return j.dump(2) + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace uap
