#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uap/ndgrad.hpp"

namespace uap {

enum class Arch { Lstm, Gru };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& name);

// Weights of a single-layer recurrent regressor with a linear head on the
// final hidden state.
//
// LSTM gates are packed i|f|g|o along columns, GRU gates r|z|n. Names:
//   w_ih [N, G*H], w_hh [H, G*H], b_ih [G*H], b_hh [G*H], w_out [H, 1], b_out [1]
// The head output is multiplied by target_scale, so predictions are in
// cycles while training runs on scaled labels.
struct ModelParams {
  Arch arch = Arch::Lstm;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::uint64_t seed = 0;
  double target_scale = 1.0;
  std::map<std::string, nd::Array> weights;

  std::size_t gates() const { return arch == Arch::Lstm ? 4 : 3; }
  std::string id() const;
  void validate() const;
  bool operator==(const ModelParams&) const = default;
};

// Uniform init in [-1/sqrt(H), 1/sqrt(H)].
ModelParams init_params(Arch arch, std::size_t input_dim, std::size_t hidden_dim,
                        std::uint64_t seed, double target_scale = 100.0);

ModelParams zero_params(Arch arch, std::size_t input_dim, std::size_t hidden_dim);

// One window per batch row; windows are [steps, features] row-major.
struct WindowBatch {
  std::size_t steps = 0;
  std::size_t features = 0;
  std::vector<double> values;  // [batch, steps, features]

  std::size_t batch() const {
    return steps * features == 0 ? 0 : values.size() / (steps * features);
  }
};

// Unrolls the cell over the window and applies the head. `windows` is
// [batch, steps, input_dim]; returns [batch, 1] predictions in target units.
// Parameters are placed on the tape as leaves; set params_require_grad to
// train. `param_leaves`, if given, receives the leaf handle for each weight.
nd::Tensor forward(nd::Tape& tape, const ModelParams& params, nd::Tensor windows,
                   bool params_require_grad = false,
                   std::map<std::string, nd::Tensor>* param_leaves = nullptr);

// Same model built from primitive tape ops only; the reference route for
// checking the fused cells.
nd::Tensor forward_composed(nd::Tape& tape, const ModelParams& params, nd::Tensor windows,
                            bool params_require_grad = false,
                            std::map<std::string, nd::Tensor>* param_leaves = nullptr);

double predict(const ModelParams& params, std::span<const double> window, std::size_t steps);

// Batched prediction; `jobs` > 1 splits batches over threads.
std::vector<double> predict_batch(const ModelParams& params, const WindowBatch& batch,
                                  std::size_t jobs = 1);

struct OutputGradient {
  double value = 0.0;
  std::vector<double> grad;  // d f / d window, same layout as the window
};

// f(window) and its input gradient from one forward/backward pass.
OutputGradient output_gradient(const ModelParams& params, std::span<const double> window,
                               std::size_t steps);

// MSE loss (scaled target units as used in training) and its input gradient.
OutputGradient loss_gradient(const ModelParams& params, std::span<const double> window,
                             std::size_t steps, double label);

struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;

  void validate() const;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_history;  // mean training loss per epoch, scaled units
};

struct TrainSample {
  std::span<const double> window;
  double label = 0.0;
};

TrainResult train(const ModelParams& init, std::span<const TrainSample> data, std::size_t steps,
                  const TrainConfig& cfg);

// Mean squared error in scaled units, as reported in the loss history.
double training_loss(const ModelParams& params, std::span<const TrainSample> data,
                     std::size_t steps);

// JSON checkpoint. Loading checks format version and, when given, the
// expected architecture.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path,
                            std::optional<Arch> expected = std::nullopt);
std::string checkpoint_to_json(const ModelParams& params);
ModelParams checkpoint_from_json(const std::string& text,
                                 std::optional<Arch> expected = std::nullopt);

inline constexpr int kCheckpointVersion = 1;

}  // namespace uap
