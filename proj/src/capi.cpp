#include "uap/uap.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uap/attacks.hpp"
#include "uap/data.hpp"
#include "uap/error.hpp"
#include "uap/eval.hpp"
#include "uap/log.hpp"
#include "uap/models.hpp"

struct uap_dataset {
  uap::Dataset data;
  std::size_t train_engines = 0;
  std::size_t test_engines = 0;
};

struct uap_model {
  uap::ModelParams params;
  std::vector<double> loss_history;
  std::size_t jobs = 1;
};

struct uap_perturbation {
  uap::Perturbation p;
};

struct uap_report {
  std::vector<uap::AttackReport> reports;
};

struct uap_sweep {
  uap::SweepResult result;
  uap::AttackConfig cfg;
};

namespace {

thread_local std::string g_last_error;

uap_status fail(uap_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

// Runs fn, translating exceptions into status codes.
template <class Fn>
uap_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return UAP_OK;
  } catch (const uap::Error& e) {
    return fail(static_cast<uap_status>(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(UAP_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(UAP_E_INTERNAL, e.what());
  }
}

void require(const void* ptr, const char* name) {
  if (ptr == nullptr) throw uap::UsageError(std::string(name) + " is NULL");
}

std::optional<double> cap_from(double rul_cap) {
  if (std::isnan(rul_cap) || rul_cap < 0.0) return std::nullopt;
  return rul_cap;
}

void copy_name(char* dst, std::size_t cap, const std::string& src) {
  const std::size_t n = std::min(cap - 1, src.size());
  std::memcpy(dst, src.data(), n);
  dst[n] = '\0';
}

const uap::WindowSet& split_of(const uap_dataset* ds, uap_split split) {
  switch (split) {
    case UAP_SPLIT_TRAIN:
      return ds->data.train;
    case UAP_SPLIT_TEST:
      return ds->data.test;
  }
  throw uap::UsageError("unknown split " + std::to_string(static_cast<int>(split)));
}

uap::Regressor regressor_for(const uap_model* m, const uap_dataset* ds) {
  if (m->params.input_dim != ds->data.train.features) {
    throw uap::DimensionError("model expects " + std::to_string(m->params.input_dim) +
                              " features, data set has " +
                              std::to_string(ds->data.train.features));
  }
  return uap::make_regressor(m->params, ds->data.train.steps, m->jobs);
}

uap::AttackConfig to_cpp(const uap_attack_config& c) {
  uap::AttackConfig a;
  a.epsilon = c.epsilon;
  a.alpha = c.alpha;
  a.r_fool = c.r_fool;
  a.e_fool = c.e_fool;
  if (c.inner_step > 0.0) a.inner_step = c.inner_step;
  a.inner_max_iters = c.inner_max_iters;
  a.clamp_inputs = c.clamp_inputs != 0;
  a.seed = c.seed;
  return a;
}

uap_dataset* wrap_dataset(const uap::CmapssData& raw, std::size_t steps, double rul_cap) {
  auto* out = new uap_dataset;
  out->data = uap::prepare_dataset(raw, steps, cap_from(rul_cap));
  out->train_engines = raw.train.size();
  out->test_engines = raw.test.size();
  return out;
}

std::size_t zero_labels(const uap::WindowSet& s) {
  std::size_t n = 0;
  for (const auto& w : s.windows) n += w.y > 0.0 ? 0 : 1;
  return n;
}

}  // namespace

extern "C" {

const char* uap_version(void) { return "1.0.0"; }

const char* uap_last_error(void) { return g_last_error.c_str(); }

uap_status uap_set_log_level(const char* level) {
  return guarded([&] {
    require(level, "level");
    uap::log::Level lvl;
    if (!uap::log::parse_level(level, lvl)) {
      throw uap::UsageError(std::string("unknown log level '") + level + "'");
    }
    uap::log::set_level(lvl);
  });
}

// ---- data

uap_status uap_dataset_load(const char* train_path, const char* test_path, const char* rul_path,
                            std::size_t steps, double rul_cap, uap_dataset** out) {
  return guarded([&] {
    require(train_path, "train_path");
    require(test_path, "test_path");
    require(rul_path, "rul_path");
    require(out, "out");
    *out = wrap_dataset(uap::load_cmapss(train_path, test_path, rul_path), steps, rul_cap);
  });
}

uap_status uap_dataset_synthetic(uint64_t seed, std::size_t n_train, std::size_t n_test,
                                 std::size_t steps, double rul_cap, uap_dataset** out) {
  return guarded([&] {
    require(out, "out");
    *out = wrap_dataset(uap::synth_cmapss(seed, n_train, n_test), steps, rul_cap);
  });
}

uap_status uap_synth_write(uint64_t seed, std::size_t n_train, std::size_t n_test, const char* dir) {
  return guarded([&] {
    require(dir, "dir");
    const std::filesystem::path d(dir);
    std::error_code ec;
    std::filesystem::create_directories(d, ec);
    if (ec) throw uap::IoError("cannot create directory " + d.string() + ": " + ec.message());
    const auto data = uap::synth_cmapss(seed, n_train, n_test);
    uap::write_cmapss_series(data.train, d / "train_FD001.txt");
    uap::write_cmapss_series(data.test, d / "test_FD001.txt");
    uap::write_rul_file(data.test_final_rul, d / "RUL_FD001.txt");
  });
}

uap_status uap_dataset_info_get(const uap_dataset* ds, uap_dataset_info* out) {
  return guarded([&] {
    require(ds, "ds");
    require(out, "out");
    const auto& d = ds->data;
    *out = uap_dataset_info{d.train.steps,
                            d.train.features,
                            d.stats.source_features,
                            d.train.size(),
                            d.test.size(),
                            ds->train_engines,
                            ds->test_engines,
                            d.train.skipped_engines,
                            d.test.skipped_engines,
                            d.test.clamped_values,
                            zero_labels(d.train),
                            zero_labels(d.test)};
  });
}

void uap_dataset_free(uap_dataset* ds) { delete ds; }

// ---- models

void uap_train_config_default(uap_train_config* cfg) {
  if (cfg == nullptr) return;
  const uap::TrainConfig d;
  *cfg = uap_train_config{d.epochs, d.learning_rate, d.batch_size, d.seed, d.clip_norm};
}

uap_status uap_model_train(const uap_dataset* ds, const char* arch, std::size_t hidden_dim,
                           uint64_t init_seed, const uap_train_config* cfg, uap_model** out) {
  return guarded([&] {
    require(ds, "ds");
    require(arch, "arch");
    require(cfg, "cfg");
    require(out, "out");
    uap::TrainConfig tc;
    tc.epochs = cfg->epochs;
    tc.learning_rate = cfg->learning_rate;
    tc.batch_size = cfg->batch_size;
    tc.seed = cfg->seed;
    tc.clip_norm = cfg->clip_norm;
    const auto& train = ds->data.train;
    std::vector<uap::TrainSample> samples;
    samples.reserve(train.size());
    for (const auto& w : train.windows) samples.push_back({w.x, w.y});
    const auto init =
        uap::init_params(uap::parse_arch(arch), train.features, hidden_dim, init_seed);
    auto res = uap::train(init, samples, train.steps, tc);
    *out = new uap_model{std::move(res.params), std::move(res.loss_history), 1};
  });
}

uap_status uap_model_load(const char* path, uap_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new uap_model{uap::load_checkpoint(path), {}, 1};
  });
}

uap_status uap_model_save(const uap_model* m, const char* path) {
  return guarded([&] {
    require(m, "m");
    require(path, "path");
    uap::save_checkpoint(m->params, path);
  });
}

uap_status uap_model_info_get(const uap_model* m, uap_model_info* out) {
  return guarded([&] {
    require(m, "m");
    require(out, "out");
    *out = uap_model_info{};
    copy_name(out->arch, sizeof out->arch, uap::to_string(m->params.arch));
    out->input_dim = m->params.input_dim;
    out->hidden_dim = m->params.hidden_dim;
    out->seed = m->params.seed;
    out->target_scale = m->params.target_scale;
    out->epochs_trained = m->loss_history.size();
  });
}

uap_status uap_model_loss_history(const uap_model* m, double* out, std::size_t cap,
                                  std::size_t* count) {
  return guarded([&] {
    require(m, "m");
    if (cap > 0) require(out, "out");
    for (std::size_t i = 0; i < std::min(cap, m->loss_history.size()); ++i) {
      out[i] = m->loss_history[i];
    }
    if (count) *count = m->loss_history.size();
  });
}

uap_status uap_model_set_jobs(uap_model* m, std::size_t jobs) {
  return guarded([&] {
    require(m, "m");
    if (jobs < 1) throw uap::ConfigError("jobs must be >= 1");
    m->jobs = jobs;
  });
}

uap_status uap_model_predict(const uap_model* m, const double* windows, std::size_t n,
                             std::size_t steps, std::size_t features, double* out) {
  return guarded([&] {
    require(m, "m");
    if (n == 0) return;
    require(windows, "windows");
    require(out, "out");
    uap::WindowBatch b{steps, features, {windows, windows + n * steps * features}};
    const auto preds = uap::predict_batch(m->params, b, m->jobs);
    std::copy(preds.begin(), preds.end(), out);
  });
}

void uap_model_free(uap_model* m) { delete m; }

// ---- attacks

void uap_attack_config_default(uap_attack_config* cfg) {
  if (cfg == nullptr) return;
  const uap::AttackConfig d;
  *cfg = uap_attack_config{d.epsilon,         d.alpha, d.r_fool, d.e_fool, 0.0,
                           d.inner_max_iters, 0,       d.seed};
}

uap_status uap_attack_compute(const uap_model* m, const uap_dataset* ds, uap_split split,
                              const uap_attack_config* cfg, uap_progress_fn progress, void* user,
                              uap_perturbation** out) {
  return guarded([&] {
    require(m, "m");
    require(ds, "ds");
    require(cfg, "cfg");
    require(out, "out");
    uap::UapObserver obs;
    if (progress) {
      obs = [&](const uap::UapProgress& pr) {
        double linf = 0.0;
        for (double v : pr.u) linf = std::max(linf, std::fabs(v));
        progress(user, pr.epoch, pr.sample, linf);
      };
    }
    auto p = uap::uap_compute(regressor_for(m, ds), split_of(ds, split), to_cpp(*cfg), obs);
    *out = new uap_perturbation{std::move(p)};
  });
}

uap_status uap_perturbation_zero(std::size_t steps, std::size_t features, double epsilon,
                                 uap_perturbation** out) {
  return guarded([&] {
    require(out, "out");
    if (steps == 0 || features == 0) throw uap::DimensionError("perturbation shape must be positive");
    if (!(epsilon >= 0.0)) throw uap::ConfigError("epsilon must be >= 0");
    *out = new uap_perturbation{uap::zero_perturbation(steps, features, epsilon)};
  });
}

uap_status uap_perturbation_load(const char* path, uap_perturbation** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new uap_perturbation{uap::load_perturbation(path)};
  });
}

uap_status uap_perturbation_save(const uap_perturbation* p, const char* path) {
  return guarded([&] {
    require(p, "p");
    require(path, "path");
    uap::save_perturbation(p->p, path);
  });
}

uap_status uap_perturbation_info_get(const uap_perturbation* p, uap_perturbation_info* out) {
  return guarded([&] {
    require(p, "p");
    require(out, "out");
    *out = uap_perturbation_info{};
    out->steps = p->p.steps;
    out->features = p->p.features;
    out->epsilon = p->p.epsilon;
    out->alpha = p->p.alpha;
    out->achieved_fooling = p->p.achieved_fooling;
    out->epochs_run = p->p.epochs_run;
    out->linf = p->p.linf();
    copy_name(out->source_model, sizeof out->source_model, p->p.source_model);
  });
}

uap_status uap_perturbation_values(const uap_perturbation* p, double* out, std::size_t cap) {
  return guarded([&] {
    require(p, "p");
    require(out, "out");
    if (cap < p->p.u.size()) {
      throw uap::DimensionError("buffer holds " + std::to_string(cap) + " values, need " +
                                std::to_string(p->p.u.size()));
    }
    std::copy(p->p.u.begin(), p->p.u.end(), out);
  });
}

void uap_perturbation_free(uap_perturbation* p) { delete p; }

// ---- evaluation

uap_status uap_evaluate(const uap_model* m, const uap_dataset* ds, uap_split split,
                        const uap_perturbation* p, double alpha, int clamp, const char* model_name,
                        const char* attack_name, uap_report** out) {
  return guarded([&] {
    require(m, "m");
    require(ds, "ds");
    require(out, "out");
    auto rep = uap::evaluate(regressor_for(m, ds), split_of(ds, split), p ? &p->p : nullptr, alpha,
                             clamp != 0, model_name ? model_name : "",
                             attack_name ? attack_name : "");
    *out = new uap_report{{std::move(rep)}};
  });
}

uap_status uap_transfer(const uap_model* a, const char* name_a, const uap_perturbation* ua,
                        const uap_model* b, const char* name_b, const uap_perturbation* ub,
                        const uap_dataset* ds, uap_split split, double alpha, int clamp,
                        uap_report** out) {
  return guarded([&] {
    require(a, "a");
    require(b, "b");
    require(ua, "ua");
    require(ub, "ub");
    require(ds, "ds");
    require(out, "out");
    const uap::Victim va{name_a ? name_a : uap::to_string(a->params.arch), regressor_for(a, ds), ua->p};
    const uap::Victim vb{name_b ? name_b : uap::to_string(b->params.arch), regressor_for(b, ds), ub->p};
    *out = new uap_report{uap::transfer_matrix(va, vb, split_of(ds, split), alpha, clamp != 0)};
  });
}

std::size_t uap_report_count(const uap_report* r) { return r ? r->reports.size() : 0; }

uap_status uap_report_get(const uap_report* r, std::size_t index, uap_report_summary* out) {
  return guarded([&] {
    require(r, "r");
    require(out, "out");
    if (index >= r->reports.size()) throw uap::UsageError("report index out of range");
    const auto& rep = r->reports[index];
    *out = uap_report_summary{};
    copy_name(out->model, sizeof out->model, rep.model);
    copy_name(out->attack, sizeof out->attack, rep.attack);
    out->fooling_pct = rep.fooling_pct;
    out->mape = rep.mape;
    out->n_samples = rep.n_samples;
    out->n_excluded = rep.n_excluded;
    double shift = 0.0;
    for (const auto& row : rep.rows) shift += row.pred_attacked - row.pred_clean;
    out->mean_shift = rep.rows.empty() ? 0.0 : shift / static_cast<double>(rep.rows.size());
    const auto last = uap::last_window_report(rep);
    std::size_t raised = 0;
    for (const auto& row : last) raised += row.pred_attacked > row.pred_clean ? 1 : 0;
    out->last_window_raised =
        last.empty() ? 0.0 : static_cast<double>(raised) / static_cast<double>(last.size());
  });
}

uap_status uap_report_write_csv(const uap_report* r, const char* path) {
  return guarded([&] {
    require(r, "r");
    require(path, "path");
    uap::write_text(path, uap::report_csv(r->reports));
  });
}

uap_status uap_report_write_json(const uap_report* r, double alpha, const char* path) {
  return guarded([&] {
    require(r, "r");
    require(path, "path");
    uap::write_text(path, uap::reports_json(r->reports, alpha));
  });
}

uap_status uap_report_write_rows(const uap_report* r, std::size_t index, int last_only,
                                 const char* path) {
  return guarded([&] {
    require(r, "r");
    require(path, "path");
    if (index >= r->reports.size()) throw uap::UsageError("report index out of range");
    const auto& rep = r->reports[index];
    uap::write_text(path, last_only ? uap::rows_csv(uap::last_window_report(rep))
                                    : uap::rows_csv(rep.rows));
  });
}

void uap_report_free(uap_report* r) { delete r; }

uap_status uap_trajectory_write(const uap_model* m, const uap_dataset* ds, uap_split split,
                                int engine_id, const uap_perturbation* p, int clamp,
                                const char* path) {
  return guarded([&] {
    require(m, "m");
    require(ds, "ds");
    require(path, "path");
    std::span<const double> u;
    if (p) u = p->p.u;
    const auto rows =
        uap::trajectory_report(regressor_for(m, ds), split_of(ds, split), engine_id, u, clamp != 0);
    uap::write_text(path, uap::rows_csv(rows));
  });
}

uap_status uap_traces_write(const uap_dataset* ds, uap_split split, std::size_t window,
                            const uap_perturbation* p, int clamp, const char* path) {
  return guarded([&] {
    require(ds, "ds");
    require(path, "path");
    const auto& set = split_of(ds, split);
    if (window >= set.size()) throw uap::UsageError("window index out of range");
    std::span<const double> u;
    if (p) u = p->p.u;
    uap::write_text(path, uap::traces_csv(uap::input_traces(set.windows[window], set.features, u,
                                                            clamp != 0)));
  });
}

uap_status uap_sweep_run(const uap_model* m, const uap_dataset* ds, uap_split attack_split,
                         uap_split eval_split, const double* epsilons, std::size_t n,
                         const uap_attack_config* cfg, std::size_t jobs, uap_sweep** out) {
  return guarded([&] {
    require(m, "m");
    require(ds, "ds");
    require(epsilons, "epsilons");
    require(cfg, "cfg");
    require(out, "out");
    const auto c = to_cpp(*cfg);
    auto res = uap::epsilon_sweep(regressor_for(m, ds), split_of(ds, attack_split),
                                  split_of(ds, eval_split), {epsilons, n}, c, jobs);
    *out = new uap_sweep{std::move(res), c};
  });
}

std::size_t uap_sweep_count(const uap_sweep* s) { return s ? s->result.rows.size() : 0; }

uap_status uap_sweep_get(const uap_sweep* s, std::size_t index, double* epsilon,
                         double* fooling_pct, double* mape) {
  return guarded([&] {
    require(s, "s");
    if (index >= s->result.rows.size()) throw uap::UsageError("sweep index out of range");
    const auto& row = s->result.rows[index];
    if (epsilon) *epsilon = row.epsilon;
    if (fooling_pct) *fooling_pct = row.fooling_pct;
    if (mape) *mape = row.mape;
  });
}

uap_status uap_sweep_write_csv(const uap_sweep* s, const char* path) {
  return guarded([&] {
    require(s, "s");
    require(path, "path");
    uap::write_text(path, uap::sweep_csv(s->result));
  });
}

uap_status uap_sweep_write_json(const uap_sweep* s, const char* path) {
  return guarded([&] {
    require(s, "s");
    require(path, "path");
    uap::write_text(path, uap::sweep_json(s->result, s->cfg));
  });
}

void uap_sweep_free(uap_sweep* s) { delete s; }

}  // extern "C"
