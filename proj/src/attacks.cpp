#include "uap/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "uap/error.hpp"
#include "uap/format.hpp"
#include "uap/log.hpp"

namespace uap {

using json = nlohmann::json;

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + " is not finite");
}

void check_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + " has " + std::to_string(got) + " values, expected " +
                         std::to_string(want));
  }
}

}  // namespace

double Regressor::value(std::span<const double> window) const {
  WindowBatch b{steps, features, {window.begin(), window.end()}};
  const double v = predict(b).at(0);
  check_finite(v, "model output");
  return v;
}

Regressor make_regressor(const ModelParams& params, std::size_t steps, std::size_t jobs) {
  params.validate();
  Regressor r;
  r.id = params.id();
  r.steps = steps;
  r.features = params.input_dim;
  r.predict = [params, jobs](const WindowBatch& b) { return predict_batch(params, b, jobs); };
  r.gradient = [params, steps](std::span<const double> w) {
    return output_gradient(params, w, steps);
  };
  return r;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be >= 0");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be > 0");
  if (!(r_fool > 0.0 && r_fool <= 1.0)) throw ConfigError("r_fool must lie in (0, 1]");
  if (e_fool < 1) throw ConfigError("e_fool must be >= 1");
  if (inner_step && !(*inner_step > 0.0)) throw ConfigError("inner step must be > 0");
  if (inner_max_iters < 1) throw ConfigError("inner_max_iters must be >= 1");
}

double Perturbation::linf() const {
  double m = 0.0;
  for (double v : u) m = std::max(m, std::fabs(v));
  return m;
}

void Perturbation::validate() const {
  if (steps == 0 || features == 0) throw FormatError("perturbation has an empty shape");
  check_size(u.size(), steps * features, "perturbation");
  if (!(epsilon >= 0.0)) throw FormatError("perturbation epsilon must be >= 0");
  for (double v : u) {
    if (!std::isfinite(v)) throw FormatError("perturbation holds a non-finite value");
  }
  if (linf() > epsilon) {
    throw FormatError("perturbation exceeds its epsilon bound (" + fmt::shortest(linf()) + " > " +
                      fmt::shortest(epsilon) + ")");
  }
}

Perturbation zero_perturbation(std::size_t steps, std::size_t features, double epsilon) {
  Perturbation p;
  p.steps = steps;
  p.features = features;
  p.u.assign(steps * features, 0.0);
  p.epsilon = epsilon;
  p.source_model = "none";
  return p;
}

std::vector<double> apply_perturbation(std::span<const double> x, std::span<const double> u,
                                       bool clamp) {
  check_size(u.size(), x.size(), "perturbation");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] + u[i];
    if (clamp) out[i] = std::clamp(out[i], 0.0, 1.0);
  }
  return out;
}

WindowBatch perturbed_batch(const WindowSet& set, std::span<const double> u, bool clamp) {
  const std::size_t stride = set.steps * set.features;
  if (!u.empty()) check_size(u.size(), stride, "perturbation");
  WindowBatch b{set.steps, set.features, {}};
  b.values.reserve(set.size() * stride);
  for (const auto& w : set.windows) {
    for (std::size_t i = 0; i < stride; ++i) {
      double v = w.x[i];
      if (!u.empty()) {
        v += u[i];
        if (clamp) v = std::clamp(v, 0.0, 1.0);
      }
      b.values.push_back(v);
    }
  }
  return b;
}

std::vector<double> fgsm(const Regressor& model, std::span<const double> x, double label,
                         double epsilon, bool clamp) {
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  check_size(x.size(), model.window_size(), "window");
  const OutputGradient og = model.gradient(x);
  check_finite(og.value, "model output");
  // dL/dx = 2 (f - y) df/dx, so its sign is sign(f - y) * sign(df/dx).
  const double s = sign(og.value - label);
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += epsilon * (s * sign(og.grad[i]));
    if (clamp) out[i] = std::clamp(out[i], 0.0, 1.0);
  }
  return out;
}

std::vector<double> project_linf(std::span<const double> u, double epsilon) {
  std::vector<double> out(u.begin(), u.end());
  project_linf_inplace(out, epsilon);
  return out;
}

void project_linf_inplace(std::span<double> u, double epsilon) {
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  for (double& v : u) v = std::clamp(v, -epsilon, epsilon);
}

double check_fool(const Regressor& model, const WindowSet& set, std::span<const double> u,
                  double alpha, bool clamp) {
  if (set.empty()) throw DomainError("check_fool: empty data set");
  if (set.features != model.features || set.steps != model.steps) {
    throw DimensionError("check_fool: windows do not match the model input shape");
  }
  const auto preds = model.predict(perturbed_batch(set, u, clamp));
  std::size_t fooled = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double y = set.windows[i].y;
    if (!(y > 0.0)) continue;
    check_finite(preds[i], "model output");
    ++counted;
    if (preds[i] > (1.0 + alpha) * y) ++fooled;
  }
  if (counted == 0) throw DomainError("check_fool: no window has a positive label");
  return static_cast<double>(fooled) / static_cast<double>(counted);
}

InnerResult inner_min_r(const Regressor& model, std::span<const double> x, double label,
                        double alpha, double step, std::size_t max_iters, bool clamp) {
  check_size(x.size(), model.window_size(), "window");
  if (!(step > 0.0)) throw ConfigError("inner step must be > 0");
  const double threshold = (1.0 + alpha) * label;
  InnerResult res;
  res.r.assign(x.size(), 0.0);
  std::vector<double> probe(x.begin(), x.end());
  auto refresh = [&] {
    for (std::size_t i = 0; i < x.size(); ++i) {
      probe[i] = x[i] + res.r[i];
      if (clamp) probe[i] = std::clamp(probe[i], 0.0, 1.0);
    }
  };
  for (;;) {
    if (res.steps == max_iters) {
      res.converged = model.value(probe) > threshold;
      return res;
    }
    const OutputGradient og = model.gradient(probe);
    check_finite(og.value, "model output");
    if (og.value > threshold) {
      res.converged = true;
      return res;
    }
    bool any = false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = sign(og.grad[i]);
      if (s != 0.0) any = true;
      res.r[i] += step * s;
    }
    if (!any) {
      res.zero_gradient = true;
      return res;
    }
    ++res.steps;
    refresh();
  }
}

Perturbation uap_compute(const Regressor& model, const WindowSet& set, const AttackConfig& cfg,
                         const UapObserver& observer) {
  cfg.validate();
  if (set.empty()) throw DomainError("uap_compute: empty data set");
  if (set.features != model.features || set.steps != model.steps) {
    throw DimensionError("uap_compute: windows do not match the model input shape");
  }
  Perturbation p = zero_perturbation(set.steps, set.features, cfg.epsilon);
  p.alpha = cfg.alpha;
  p.source_model = model.id;

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.windows[i].y > 0.0) order.push_back(i);
  }
  if (order.empty()) throw DomainError("uap_compute: no window has a positive label");

  std::mt19937_64 rng(cfg.seed);
  double ratio = check_fool(model, set, p.u, cfg.alpha, cfg.clamp_inputs);
  log::debug("uap: initial fooling ratio " + fmt::shortest(ratio));
  std::size_t zero_grad = 0;
  while (cfg.epsilon > 0.0 && ratio < cfg.r_fool && p.epochs_run < cfg.e_fool) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t updates = 0;
    for (std::size_t idx : order) {
      const Window& w = set.windows[idx];
      const auto xu = apply_perturbation(w.x, p.u, cfg.clamp_inputs);
      if (model.value(xu) > (1.0 + cfg.alpha) * w.y) continue;
      InnerResult r = inner_min_r(model, xu, w.y, cfg.alpha, cfg.step(), cfg.inner_max_iters,
                                  cfg.clamp_inputs);
      if (r.zero_gradient) ++zero_grad;
      for (std::size_t i = 0; i < p.u.size(); ++i) p.u[i] += r.r[i];
      project_linf_inplace(p.u, cfg.epsilon);
      ++updates;
      if (observer) observer({p.epochs_run, idx, p.u, r.converged});
    }
    ++p.epochs_run;
    ratio = check_fool(model, set, p.u, cfg.alpha, cfg.clamp_inputs);
    log::info("uap: epoch " + std::to_string(p.epochs_run) + ", " + std::to_string(updates) +
              " updates, fooling ratio " + fmt::fixed(100.0 * ratio) + "%");
  }
  if (zero_grad > 0) {
    log::info("uap: " + std::to_string(zero_grad) + " inner solve(s) hit a zero gradient");
  }
  p.achieved_fooling = ratio;
  return p;
}

// ---------------------------------------------------------------------------
// Files

std::string perturbation_to_json(const Perturbation& p) {
  p.validate();
  json j;
  j["format_version"] = kPerturbationVersion;
  j["kind"] = "uap-perturbation";
  j["shape"] = {p.steps, p.features};
  j["epsilon"] = p.epsilon;
  j["alpha"] = p.alpha;
  j["source_model"] = p.source_model;
  j["achieved_fooling"] = p.achieved_fooling;
  j["epochs_run"] = p.epochs_run;
  json rows = json::array();
  for (std::size_t t = 0; t < p.steps; ++t) {
    rows.push_back(std::vector<double>(p.u.begin() + static_cast<std::ptrdiff_t>(t * p.features),
                                       p.u.begin() + static_cast<std::ptrdiff_t>((t + 1) * p.features)));
  }
  j["values"] = std::move(rows);
  return j.dump() + "\n";
}

Perturbation perturbation_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("perturbation is not valid JSON: ") + e.what());
  }
  try {
    if (!j.is_object() || !j.contains("format_version")) {
      throw FormatError("perturbation lacks format_version");
    }
    if (j.at("format_version").get<int>() != kPerturbationVersion) {
      throw FormatError("unsupported perturbation format_version " + j.at("format_version").dump());
    }
    if (j.contains("kind") && j.at("kind") != "uap-perturbation") {
      throw FormatError("file is not a perturbation");
    }
    Perturbation p;
    const auto& shape = j.at("shape");
    if (!shape.is_array() || shape.size() != 2) throw FormatError("perturbation shape must be [M, N]");
    p.steps = shape[0].get<std::size_t>();
    p.features = shape[1].get<std::size_t>();
    p.epsilon = j.at("epsilon").get<double>();
    p.alpha = j.at("alpha").get<double>();
    p.source_model = j.at("source_model").get<std::string>();
    p.achieved_fooling = j.at("achieved_fooling").get<double>();
    p.epochs_run = j.at("epochs_run").get<std::size_t>();
    const auto& rows = j.at("values");
    if (!rows.is_array() || rows.size() != p.steps) {
      throw FormatError("perturbation values do not match shape");
    }
    p.u.reserve(p.steps * p.features);
    for (const auto& row : rows) {
      if (!row.is_array() || row.size() != p.features) {
        throw FormatError("perturbation values do not match shape");
      }
      for (const auto& v : row) p.u.push_back(v.get<double>());
    }
    p.validate();
    return p;
  } catch (const DimensionError& e) {
    throw FormatError(std::string("perturbation: ") + e.what());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed perturbation: ") + e.what());
  }
}

void save_perturbation(const Perturbation& p, const std::filesystem::path& path) {
  const std::string text = perturbation_to_json(p);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write perturbation " + path.string());
  out << text;
  if (!out) throw IoError("failed writing perturbation " + path.string());
}

Perturbation load_perturbation(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read perturbation " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return perturbation_from_json(ss.str());
}

}  // namespace uap
