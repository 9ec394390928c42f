#include "uap/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "uap/cells.hpp"
#include "uap/error.hpp"
#include "uap/format.hpp"
#include "uap/log.hpp"

namespace uap {

using nd::Array;
using nd::Tape;
using nd::Tensor;
using json = nlohmann::json;

std::string to_string(Arch arch) { return arch == Arch::Lstm ? "lstm" : "gru"; }

Arch parse_arch(const std::string& name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "lstm") return Arch::Lstm;
  if (lower == "gru") return Arch::Gru;
  throw ConfigError("unknown architecture '" + name + "' (expected lstm or gru)");
}

namespace {

struct WeightSpec {
  const char* name;
  nd::Shape shape;
};

std::vector<WeightSpec> weight_specs(Arch arch, std::size_t n, std::size_t h) {
  const std::size_t g = (arch == Arch::Lstm ? 4 : 3) * h;
  return {{"w_ih", {n, g}}, {"w_hh", {h, g}}, {"b_ih", {g}},
          {"b_hh", {g}},    {"w_out", {h, 1}}, {"b_out", {1}}};
}

}  // namespace

std::string ModelParams::id() const {
  return to_string(arch) + "-h" + std::to_string(hidden_dim) + "-s" + std::to_string(seed);
}

void ModelParams::validate() const {
  if (input_dim == 0 || hidden_dim == 0) throw ConfigError("model dims must be positive");
  if (!(target_scale > 0.0) || !std::isfinite(target_scale)) {
    throw ConfigError("target_scale must be positive and finite");
  }
  const auto specs = weight_specs(arch, input_dim, hidden_dim);
  if (weights.size() != specs.size()) {
    throw FormatError("model has " + std::to_string(weights.size()) + " weight arrays, expected " +
                      std::to_string(specs.size()));
  }
  for (const auto& s : specs) {
    auto it = weights.find(s.name);
    if (it == weights.end()) throw FormatError(std::string("missing weight '") + s.name + "'");
    if (it->second.shape != s.shape || it->second.data.size() != nd::numel(s.shape)) {
      throw FormatError(std::string("weight '") + s.name + "' has shape " +
                        nd::to_string(it->second.shape) + ", expected " + nd::to_string(s.shape));
    }
  }
}

ModelParams zero_params(Arch arch, std::size_t input_dim, std::size_t hidden_dim) {
  ModelParams p;
  p.arch = arch;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  for (const auto& s : weight_specs(arch, input_dim, hidden_dim)) {
    p.weights.emplace(s.name, Array::zeros(s.shape));
  }
  return p;
}

ModelParams init_params(Arch arch, std::size_t input_dim, std::size_t hidden_dim,
                        std::uint64_t seed, double target_scale) {
  ModelParams p = zero_params(arch, input_dim, hidden_dim);
  p.seed = seed;
  p.target_scale = target_scale;
  p.validate();
  std::mt19937_64 rng(seed);
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  std::uniform_real_distribution<double> dist(-k, k);
  for (const auto& s : weight_specs(arch, input_dim, hidden_dim)) {
    for (double& v : p.weights.at(s.name).data) v = dist(rng);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

struct Leaves {
  Tensor w_ih, w_hh, b_ih, b_hh, w_out, b_out;
};

Leaves place_params(Tape& tape, const ModelParams& params, Tensor windows, bool require_grad,
                    std::map<std::string, Tensor>* param_leaves) {
  if (windows.shape().size() != 3) {
    throw DimensionError("forward: windows must be [batch, steps, features], got " +
                         nd::to_string(windows.shape()));
  }
  if (windows.shape()[2] != params.input_dim) {
    throw DimensionError("forward: window has " + std::to_string(windows.shape()[2]) +
                         " features, model expects " + std::to_string(params.input_dim));
  }
  if (windows.shape()[0] == 0 || windows.shape()[1] == 0) {
    throw DimensionError("forward: empty window batch");
  }
  auto leaf = [&](const char* name) {
    Tensor t = tape.leaf(params.weights.at(name), require_grad);
    if (param_leaves) (*param_leaves)[name] = t;
    return t;
  };
  Leaves l;
  l.w_ih = leaf("w_ih");
  l.w_hh = leaf("w_hh");
  l.b_ih = leaf("b_ih");
  l.b_hh = leaf("b_hh");
  l.w_out = leaf("w_out");
  l.b_out = leaf("b_out");
  return l;
}

Tensor head(Tape& tape, const ModelParams& params, const Leaves& l, Tensor hidden) {
  const Tensor out = tape.add_row_bias(tape.matmul(hidden, l.w_out), l.b_out);
  return tape.scale(out, params.target_scale);
}

}  // namespace

Tensor forward(Tape& tape, const ModelParams& params, Tensor windows, bool params_require_grad,
               std::map<std::string, Tensor>* param_leaves) {
  const Leaves l = place_params(tape, params, windows, params_require_grad, param_leaves);
  const std::size_t batch = windows.shape()[0];
  const std::size_t steps = windows.shape()[1];
  const std::size_t h = params.hidden_dim;

  Tensor hidden;
  if (params.arch == Arch::Lstm) {
    const Tensor bias = tape.add(l.b_ih, l.b_hh);
    Tensor state = tape.leaf(Array::zeros({batch, 2 * h}));
    for (std::size_t t = 0; t < steps; ++t) {
      state = cells::lstm_step(tape, state, tape.time_step(windows, t), l.w_ih, l.w_hh, bias);
    }
    hidden = tape.slice_cols(state, 0, h);
  } else {
    hidden = tape.leaf(Array::zeros({batch, h}));
    for (std::size_t t = 0; t < steps; ++t) {
      hidden = cells::gru_step(tape, hidden, tape.time_step(windows, t), l.w_ih, l.w_hh, l.b_ih,
                               l.b_hh);
    }
  }
  return head(tape, params, l, hidden);
}

Tensor forward_composed(Tape& tape, const ModelParams& params, Tensor windows,
                        bool params_require_grad, std::map<std::string, Tensor>* param_leaves) {
  const Leaves l = place_params(tape, params, windows, params_require_grad, param_leaves);
  const std::size_t batch = windows.shape()[0];
  const std::size_t steps = windows.shape()[1];
  const std::size_t h = params.hidden_dim;

  Tensor hidden = tape.leaf(Array::zeros({batch, h}));
  if (params.arch == Arch::Lstm) {
    const Tensor bias = tape.add(l.b_ih, l.b_hh);
    Tensor cell = tape.leaf(Array::zeros({batch, h}));
    for (std::size_t t = 0; t < steps; ++t) {
      const Tensor x = tape.time_step(windows, t);
      const Tensor z =
          tape.add_row_bias(tape.add(tape.matmul(x, l.w_ih), tape.matmul(hidden, l.w_hh)), bias);
      const Tensor i = tape.sigmoid(tape.slice_cols(z, 0, h));
      const Tensor f = tape.sigmoid(tape.slice_cols(z, h, h));
      const Tensor g = tape.tanh(tape.slice_cols(z, 2 * h, h));
      const Tensor o = tape.sigmoid(tape.slice_cols(z, 3 * h, h));
      cell = tape.add(tape.mul(f, cell), tape.mul(i, g));
      hidden = tape.mul(o, tape.tanh(cell));
    }
  } else {
    for (std::size_t t = 0; t < steps; ++t) {
      const Tensor x = tape.time_step(windows, t);
      const Tensor gi = tape.add_row_bias(tape.matmul(x, l.w_ih), l.b_ih);
      const Tensor gh = tape.add_row_bias(tape.matmul(hidden, l.w_hh), l.b_hh);
      const Tensor r = tape.sigmoid(tape.add(tape.slice_cols(gi, 0, h), tape.slice_cols(gh, 0, h)));
      const Tensor z = tape.sigmoid(tape.add(tape.slice_cols(gi, h, h), tape.slice_cols(gh, h, h)));
      const Tensor n = tape.tanh(
          tape.add(tape.slice_cols(gi, 2 * h, h), tape.mul(r, tape.slice_cols(gh, 2 * h, h))));
      // (1 - z) * n + z * h == n + z * (h - n)
      hidden = tape.add(n, tape.mul(z, tape.sub(hidden, n)));
    }
  }
  return head(tape, params, l, hidden);
}

namespace {

void check_window(const ModelParams& params, std::span<const double> window, std::size_t steps) {
  if (steps == 0 || window.size() != steps * params.input_dim) {
    throw DimensionError("window of " + std::to_string(window.size()) + " values does not match " +
                         std::to_string(steps) + " steps x " + std::to_string(params.input_dim) +
                         " features");
  }
}

}  // namespace

double predict(const ModelParams& params, std::span<const double> window, std::size_t steps) {
  check_window(params, window, steps);
  Tape tape;
  const Tensor x =
      tape.leaf(Array({1, steps, params.input_dim}, {window.begin(), window.end()}));
  return forward(tape, params, x).item();
}

std::vector<double> predict_batch(const ModelParams& params, const WindowBatch& batch,
                                  std::size_t jobs) {
  const std::size_t stride = batch.steps * batch.features;
  if (stride == 0 || batch.values.size() % stride != 0) {
    throw DimensionError("predict_batch: malformed window batch");
  }
  if (batch.features != params.input_dim) {
    throw DimensionError("predict_batch: windows have " + std::to_string(batch.features) +
                         " features, model expects " + std::to_string(params.input_dim));
  }
  const std::size_t n = batch.batch();
  std::vector<double> out(n);
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;

  auto run_chunk = [&](std::size_t c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(n, lo + kChunk);
    Tape tape;
    std::vector<double> vals(batch.values.begin() + static_cast<std::ptrdiff_t>(lo * stride),
                             batch.values.begin() + static_cast<std::ptrdiff_t>(hi * stride));
    const Tensor x = tape.leaf(Array({hi - lo, batch.steps, batch.features}, std::move(vals)));
    const Tensor y = forward(tape, params, x);
    std::copy(y.data().begin(), y.data().end(), out.begin() + static_cast<std::ptrdiff_t>(lo));
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, chunks));
  if (jobs == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    return out;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < chunks; c += jobs) run_chunk(c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

OutputGradient output_gradient(const ModelParams& params, std::span<const double> window,
                               std::size_t steps) {
  check_window(params, window, steps);
  Tape tape;
  const Tensor x =
      tape.leaf(Array({1, steps, params.input_dim}, {window.begin(), window.end()}), true);
  const Tensor y = forward(tape, params, x);
  tape.backward(y);
  const auto g = x.grad();
  return {y.item(), std::vector<double>(g.begin(), g.end())};
}

OutputGradient loss_gradient(const ModelParams& params, std::span<const double> window,
                             std::size_t steps, double label) {
  check_window(params, window, steps);
  Tape tape;
  const Tensor x =
      tape.leaf(Array({1, steps, params.input_dim}, {window.begin(), window.end()}), true);
  const Tensor pred = tape.scale(forward(tape, params, x), 1.0 / params.target_scale);
  const Tensor target = tape.leaf(Array({1, 1}, {label / params.target_scale}));
  const Tensor loss = tape.mse_loss(pred, target);
  tape.backward(loss);
  const auto g = x.grad();
  return {loss.item(), std::vector<double>(g.begin(), g.end())};
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
}

namespace {

WindowBatch gather(std::span<const TrainSample> data, std::span<const std::size_t> idx,
                   std::size_t steps, std::size_t features, std::vector<double>* labels) {
  WindowBatch b;
  b.steps = steps;
  b.features = features;
  b.values.reserve(idx.size() * steps * features);
  if (labels) labels->clear();
  for (std::size_t i : idx) {
    const auto& s = data[i];
    if (s.window.size() != steps * features) {
      throw DimensionError("training window " + std::to_string(i) + " has " +
                           std::to_string(s.window.size()) + " values, expected " +
                           std::to_string(steps * features));
    }
    b.values.insert(b.values.end(), s.window.begin(), s.window.end());
    if (labels) labels->push_back(s.label);
  }
  return b;
}

}  // namespace

double training_loss(const ModelParams& params, std::span<const TrainSample> data,
                     std::size_t steps) {
  if (data.empty()) throw DomainError("training_loss: empty dataset");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto batch = gather(data, idx, steps, params.input_dim, nullptr);
  const auto preds = predict_batch(params, batch);
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double d = (preds[i] - data[i].label) / params.target_scale;
    s += d * d;
  }
  return s / static_cast<double>(data.size());
}

TrainResult train(const ModelParams& init, std::span<const TrainSample> data, std::size_t steps,
                  const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  if (data.empty()) throw DomainError("train: empty dataset");

  TrainResult res{init, {}};
  ModelParams& p = res.params;
  std::map<std::string, std::vector<double>> m1, m2;
  for (const auto& [name, w] : p.weights) {
    m1[name].assign(w.size(), 0.0);
    m2[name].assign(w.size(), 0.0);
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> labels;
  std::size_t step_count = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t lo = 0, batch_no = 0; lo < order.size(); lo += cfg.batch_size, ++batch_no) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      WindowBatch wb = gather(data, idx, steps, p.input_dim, &labels);

      Tape tape;
      std::map<std::string, Tensor> leaves;
      const Tensor x = tape.leaf(Array({idx.size(), steps, p.input_dim}, std::move(wb.values)));
      const Tensor pred = tape.scale(forward(tape, p, x, true, &leaves), 1.0 / p.target_scale);
      for (double& y : labels) y /= p.target_scale;
      const Tensor target = tape.leaf(Array({idx.size(), 1}, labels));
      const Tensor loss = tape.mse_loss(pred, target);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no) + " (" + p.id() + ")");
      }
      tape.backward(loss);
      epoch_loss += lv * static_cast<double>(idx.size());

      double sq = 0.0;
      for (const auto& [name, leaf] : leaves) {
        for (double g : leaf.grad()) sq += g * g;
      }
      const double norm = std::sqrt(sq);
      if (!std::isfinite(norm)) {
        throw NumericError("train: non-finite gradient at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_no));
      }
      const double clip = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;

      ++step_count;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
      for (auto& [name, w] : p.weights) {
        const auto g = leaves.at(name).grad();
        auto& a = m1[name];
        auto& b = m2[name];
        for (std::size_t i = 0; i < w.data.size(); ++i) {
          const double gi = g[i] * clip;
          a[i] = cfg.beta1 * a[i] + (1.0 - cfg.beta1) * gi;
          b[i] = cfg.beta2 * b[i] + (1.0 - cfg.beta2) * gi * gi;
          w.data[i] -= cfg.learning_rate * (a[i] / bc1) / (std::sqrt(b[i] / bc2) + cfg.adam_eps);
        }
      }
    }
    res.loss_history.push_back(epoch_loss / static_cast<double>(data.size()));
    log::debug("train " + to_string(p.arch) + ": epoch " + std::to_string(res.loss_history.size()) +
               " loss " + fmt::shortest(res.loss_history.back()));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json array_to_json(const Array& a) {
  if (a.shape.size() == 1) return json(a.data);
  json rows = json::array();
  const std::size_t cols = a.shape[1];
  for (std::size_t i = 0; i < a.shape[0]; ++i) {
    rows.push_back(std::vector<double>(a.data.begin() + static_cast<std::ptrdiff_t>(i * cols),
                                       a.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols)));
  }
  return rows;
}

Array array_from_json(const json& j, const nd::Shape& shape, const std::string& name) {
  Array a = Array::zeros(shape);
  auto bad = [&] { return FormatError("weight '" + name + "' does not match shape " + nd::to_string(shape)); };
  if (!j.is_array()) throw bad();
  if (shape.size() == 1) {
    if (j.size() != shape[0]) throw bad();
    for (std::size_t i = 0; i < shape[0]; ++i) a.data[i] = j[i].get<double>();
    return a;
  }
  if (j.size() != shape[0]) throw bad();
  for (std::size_t i = 0; i < shape[0]; ++i) {
    if (!j[i].is_array() || j[i].size() != shape[1]) throw bad();
    for (std::size_t k = 0; k < shape[1]; ++k) a.data[i * shape[1] + k] = j[i][k].get<double>();
  }
  return a;
}

}  // namespace

std::string checkpoint_to_json(const ModelParams& params) {
  params.validate();
  json j;
  j["format_version"] = kCheckpointVersion;
  j["kind"] = "uap-model";
  j["arch"] = to_string(params.arch);
  j["dims"] = {{"input_dim", params.input_dim}, {"hidden_dim", params.hidden_dim}};
  j["seed"] = params.seed;
  j["target_scale"] = params.target_scale;
  json w = json::object();
  for (const auto& [name, a] : params.weights) w[name] = array_to_json(a);
  j["weights"] = std::move(w);
  return j.dump() + "\n";
}

ModelParams checkpoint_from_json(const std::string& text, std::optional<Arch> expected) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (!j.is_object() || !j.contains("format_version")) {
      throw FormatError("checkpoint lacks format_version");
    }
    if (j.at("format_version").get<int>() != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint format_version " + j.at("format_version").dump());
    }
    if (j.value("kind", "") != "uap-model") throw FormatError("file is not a model checkpoint");
    ModelParams p;
    p.arch = parse_arch(j.at("arch").get<std::string>());
    if (expected && *expected != p.arch) {
      throw FormatError("checkpoint holds a " + to_string(p.arch) + " model, expected " +
                        to_string(*expected));
    }
    p.input_dim = j.at("dims").at("input_dim").get<std::size_t>();
    p.hidden_dim = j.at("dims").at("hidden_dim").get<std::size_t>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.target_scale = j.at("target_scale").get<double>();
    const auto& w = j.at("weights");
    for (const auto& s : weight_specs(p.arch, p.input_dim, p.hidden_dim)) {
      if (!w.contains(s.name)) throw FormatError(std::string("checkpoint missing weight '") + s.name + "'");
      p.weights.emplace(s.name, array_from_json(w.at(s.name), s.shape, s.name));
    }
    if (w.size() != p.weights.size()) throw FormatError("checkpoint has unexpected weight arrays");
    p.validate();
    return p;
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const std::string text = checkpoint_to_json(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << text;
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, std::optional<Arch> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str(), expected);
}

}  // namespace uap
