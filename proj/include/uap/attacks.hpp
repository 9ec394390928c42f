#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uap/data.hpp"
#include "uap/models.hpp"

namespace uap {

// Anything the attacks can query: batched predictions plus the gradient of
// the scalar output with respect to one window.
struct Regressor {
  std::string id;
  std::size_t steps = 0;
  std::size_t features = 0;
  std::function<std::vector<double>(const WindowBatch&)> predict;
  std::function<OutputGradient(std::span<const double>)> gradient;

  std::size_t window_size() const { return steps * features; }
  double value(std::span<const double> window) const;
};

Regressor make_regressor(const ModelParams& params, std::size_t steps, std::size_t jobs = 1);

struct AttackConfig {
  double epsilon = 0.01;
  double alpha = 0.1;
  double r_fool = 0.99;
  std::size_t e_fool = 3;
  std::optional<double> inner_step;  // defaults to epsilon / 10
  std::size_t inner_max_iters = 20;
  bool clamp_inputs = false;
  std::uint64_t seed = 0;

  double step() const { return inner_step ? *inner_step : epsilon / 10.0; }
  void validate() const;
};

struct Perturbation {
  std::size_t steps = 0;
  std::size_t features = 0;
  std::vector<double> u;  // [steps, features]
  double epsilon = 0.0;
  double alpha = 0.0;
  std::string source_model;
  double achieved_fooling = 0.0;  // ratio in [0, 1] on the split it was computed on
  std::size_t epochs_run = 0;

  double linf() const;
  void validate() const;
  bool operator==(const Perturbation&) const = default;
};

Perturbation zero_perturbation(std::size_t steps, std::size_t features, double epsilon = 0.0);

// x + u, optionally clamped into [0, 1].
std::vector<double> apply_perturbation(std::span<const double> x, std::span<const double> u,
                                       bool clamp = false);

// All windows of `set` stacked into one batch, each shifted by u (empty u
// means no shift).
WindowBatch perturbed_batch(const WindowSet& set, std::span<const double> u, bool clamp = false);

// x + eps * sign(dL/dx) for L = (f(x) - y)^2.
std::vector<double> fgsm(const Regressor& model, std::span<const double> x, double label,
                         double epsilon, bool clamp = false);

// Elementwise clamp into [-eps, eps].
std::vector<double> project_linf(std::span<const double> u, double epsilon);
void project_linf_inplace(std::span<double> u, double epsilon);

// Fraction of windows with y > 0 for which f(x + u) > (1 + alpha) y.
double check_fool(const Regressor& model, const WindowSet& set, std::span<const double> u,
                  double alpha, bool clamp = false);

struct InnerResult {
  std::vector<double> r;
  bool converged = false;
  std::size_t steps = 0;
  bool zero_gradient = false;
};

// Greedy sign-step ascent of f from x: r <- r + step * sign(grad f(x + r))
// until f(x + r) > (1 + alpha) y or max_iters steps are taken.
InnerResult inner_min_r(const Regressor& model, std::span<const double> x, double label,
                        double alpha, double step, std::size_t max_iters, bool clamp = false);

struct UapProgress {
  std::size_t epoch = 0;   // 0-based
  std::size_t sample = 0;  // window index in the set
  std::span<const double> u;
  bool converged = false;
};

using UapObserver = std::function<void(const UapProgress&)>;

// Universal perturbation over `set`. The observer, if given, sees U after
// every update. With epsilon 0 no epoch runs and U stays zero.
Perturbation uap_compute(const Regressor& model, const WindowSet& set, const AttackConfig& cfg,
                         const UapObserver& observer = {});

inline constexpr int kPerturbationVersion = 1;

std::string perturbation_to_json(const Perturbation& p);
Perturbation perturbation_from_json(const std::string& text);
void save_perturbation(const Perturbation& p, const std::filesystem::path& path);
Perturbation load_perturbation(const std::filesystem::path& path);

}  // namespace uap
