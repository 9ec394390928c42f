#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "uap/data.hpp"
#include "uap/error.hpp"
#include "uap/models.hpp"

using namespace uap;
using nd::Array;
using nd::Tape;
using nd::Tensor;

namespace {

std::vector<double> random_window(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<double> w(n);
  for (double& v : w) v = d(rng);
  return w;
}

// FD check of d mse(f(x), y) / dx through either forward route.
nd::GradCheckResult window_grad_check(const ModelParams& p, std::size_t steps, bool composed,
                                      std::uint64_t seed) {
  const Array x({1, steps, p.input_dim}, random_window(steps * p.input_dim, seed));
  const double label = 0.5 * p.target_scale;
  return nd::finite_diff_check(
      [&](Tape& t, Tensor in) {
        const Tensor y = composed ? forward_composed(t, p, in) : forward(t, p, in);
        const Tensor scaled = t.scale(y, 1.0 / p.target_scale);
        return t.mse_loss(scaled, t.leaf(Array({1, 1}, {label / p.target_scale})));
      },
      x);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("uap_test_" + name);
}

}  // namespace

TEST_CASE("arch names parse both ways") {
  CHECK(parse_arch("LSTM") == Arch::Lstm);
  CHECK(parse_arch("gru") == Arch::Gru);
  CHECK(to_string(Arch::Gru) == "gru");
  CHECK_THROWS_AS(parse_arch("rnn"), ConfigError);
}

TEST_CASE("zero network predicts zero; bias-only path predicts the bias") {
  for (Arch a : {Arch::Lstm, Arch::Gru}) {
    ModelParams p = zero_params(a, 3, 4);
    CHECK(predict(p, random_window(8 * 3, 1), 8) == 0.0);
    p.weights.at("b_out").data[0] = 0.75;
    CHECK(predict(p, std::vector<double>(8 * 3, 0.0), 8) == 0.75);
  }
}

TEST_CASE("window dimension mismatch is rejected") {
  const ModelParams p = init_params(Arch::Lstm, 3, 4, 1);
  CHECK_THROWS_AS(predict(p, std::vector<double>(10), 4), DimensionError);
  Tape t;
  CHECK_THROWS_AS(forward(t, p, t.leaf(Array::zeros({1, 4, 5}))), DimensionError);
}

TEST_CASE("input gradients pass finite differences on an 8x3 toy") {
  for (Arch a : {Arch::Lstm, Arch::Gru}) {
    CAPTURE(to_string(a));
    const ModelParams p = init_params(a, 3, 5, 17);
    for (bool composed : {false, true}) {
      const auto res = window_grad_check(p, 8, composed, 3);
      CHECK(res.passed);
      CHECK(res.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("fused cells agree with the composed reference") {
  for (Arch a : {Arch::Lstm, Arch::Gru}) {
    CAPTURE(to_string(a));
    const ModelParams p = init_params(a, 4, 6, 9, 1.0);
    const std::size_t steps = 12, batch = 3;
    const Array x({batch, steps, 4}, random_window(batch * steps * 4, 5));
    auto run = [&](bool composed) {
      Tape t;
      std::map<std::string, Tensor> leaves;
      const Tensor in = t.leaf(x, true);
      const Tensor y = composed ? forward_composed(t, p, in, true, &leaves)
                                : forward(t, p, in, true, &leaves);
      t.backward(t.sum(t.mul(y, y)));
      std::vector<double> out(y.data().begin(), y.data().end());
      out.insert(out.end(), in.grad().begin(), in.grad().end());
      for (const auto& [name, leaf] : leaves) out.insert(out.end(), leaf.grad().begin(), leaf.grad().end());
      return out;
    };
    const auto fused = run(false);
    const auto ref = run(true);
    REQUIRE(fused.size() == ref.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < fused.size(); ++i) {
      worst = std::max(worst, std::fabs(fused[i] - ref[i]) / std::max(1.0, std::fabs(ref[i])));
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("parameter gradients pass finite differences") {
  for (Arch a : {Arch::Lstm, Arch::Gru}) {
    CAPTURE(to_string(a));
    const ModelParams base = init_params(a, 3, 4, 23, 1.0);
    const std::vector<double> w = random_window(6 * 3, 8);
    for (const char* name : {"w_ih", "w_hh", "b_ih", "b_out"}) {
      CAPTURE(name);
      Tape t;
      std::map<std::string, Tensor> leaves;
      const Tensor y = forward(t, base, t.leaf(Array({1, 6, 3}, w)), true, &leaves);
      t.backward(t.sum(t.mul(y, y)));
      const auto g = leaves.at(name).grad();
      const Array w0 = base.weights.at(name);
      double worst = 0.0;
      for (std::size_t i = 0; i < w0.size(); ++i) {
        auto loss_at = [&](double delta) {
          ModelParams p = base;
          p.weights.at(name).data[i] += delta;
          const double v = predict(p, w, 6);
          return v * v;
        };
        const double num = (loss_at(1e-5) - loss_at(-1e-5)) / 2e-5;
        worst = std::max(worst, std::fabs(num - g[i]) / std::max({std::fabs(num), std::fabs(g[i]), 1e-6}));
      }
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("output and loss gradients are consistent") {
  const ModelParams p = init_params(Arch::Gru, 3, 4, 2);
  const auto w = random_window(10 * 3, 4);
  const auto og = output_gradient(p, w, 10);
  CHECK(og.value == predict(p, w, 10));
  const double label = 40.0;
  const auto lg = loss_gradient(p, w, 10, label);
  const double s = p.target_scale;
  CHECK(lg.value == doctest::Approx(std::pow((og.value - label) / s, 2)).epsilon(1e-12));
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(lg.grad[i] == doctest::Approx(2.0 * (og.value - label) / (s * s) * og.grad[i]).epsilon(1e-9));
  }
}

TEST_CASE("batched prediction matches single-window prediction bit for bit") {
  const ModelParams p = init_params(Arch::Lstm, 3, 5, 6);
  WindowBatch b{7, 3, random_window(150 * 7 * 3, 3)};
  const auto one = predict_batch(p, b, 1);
  const auto many = predict_batch(p, b, 3);
  CHECK(one == many);
  for (std::size_t i = 0; i < b.batch(); i += 37) {
    CHECK(one[i] == predict(p, std::span<const double>(b.values).subspan(i * 21, 21), 7));
  }
}

TEST_CASE("training is reproducible and zero epochs leave params unchanged") {
  const auto fleet = synth_generate(6, 4, 3);
  const auto stats = fit_norm(fleet);
  const auto ws = make_windows(fleet, stats, 10);
  std::vector<TrainSample> data;
  for (const auto& w : ws.windows) data.push_back({w.x, w.y});
  const ModelParams init = init_params(Arch::Gru, ws.features, 6, 4);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto r0 = train(init, data, 10, cfg);
  CHECK(r0.params == init);
  CHECK(r0.loss_history.empty());
  cfg.epochs = 2;
  cfg.seed = 9;
  const auto r1 = train(init, data, 10, cfg);
  const auto r2 = train(init, data, 10, cfg);
  CHECK(r1.params == r2.params);
  CHECK(r1.loss_history == r2.loss_history);
  CHECK(r1.loss_history.size() == 2);
  CHECK_FALSE(r1.params == init);
}

TEST_CASE("training on synthetic degradation cuts the loss by 4x in 50 epochs") {
  SynthOptions opts;
  opts.min_life = 40;
  opts.max_life = 70;
  const auto fleet = synth_generate(12, 5, 8, opts);
  const auto stats = fit_norm(fleet);
  const auto ws = make_windows(fleet, stats, 10);
  std::vector<TrainSample> data;
  for (const auto& w : ws.windows) data.push_back({w.x, w.y});
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 1e-2;
  cfg.seed = 1;
  for (Arch a : {Arch::Lstm, Arch::Gru}) {
    CAPTURE(to_string(a));
    const ModelParams init = init_params(a, ws.features, 8, 2);
    const double before = training_loss(init, data, 10);
    const auto res = train(init, data, 10, cfg);
    CHECK(res.loss_history.size() == 50);
    CHECK(training_loss(res.params, data, 10) < 0.25 * before);
  }
}

TEST_CASE("train rejects bad config and NaN data") {
  const ModelParams init = init_params(Arch::Lstm, 2, 3, 1);
  std::vector<double> w(4 * 2, 0.5);
  std::vector<TrainSample> data{{w, 10.0}};
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(train(init, data, 4, cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.epochs = 1;
  std::vector<double> bad(8, std::nan(""));
  std::vector<TrainSample> nan_data{{bad, 10.0}};
  CHECK_THROWS_AS(train(init, nan_data, 4, cfg), NumericError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  for (Arch a : {Arch::Lstm, Arch::Gru}) {
    const ModelParams p = init_params(a, 5, 7, 123);
    const auto path = temp_file("ckpt_" + to_string(a) + ".json");
    save_checkpoint(p, path);
    const ModelParams q = load_checkpoint(path, a);
    CHECK(q == p);
    const auto w = random_window(9 * 5, 1);
    CHECK(predict(q, w, 9) == predict(p, w, 9));
    CHECK(checkpoint_to_json(q) == checkpoint_to_json(p));
    std::filesystem::remove(path);
  }
}

TEST_CASE("checkpoint errors are explicit") {
  const ModelParams p = init_params(Arch::Lstm, 3, 4, 1);
  const std::string text = checkpoint_to_json(p);
  CHECK_THROWS_AS(checkpoint_from_json(text.substr(0, text.size() / 2)), FormatError);
  CHECK_THROWS_AS(checkpoint_from_json(text, Arch::Gru), FormatError);
  std::string bumped = text;
  bumped.replace(bumped.find("\"format_version\":1"), 18, "\"format_version\":9");
  CHECK_THROWS_AS(checkpoint_from_json(bumped), FormatError);
  CHECK_THROWS_AS(checkpoint_from_json("[]"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(temp_file("missing.json")), IoError);

  const auto path = temp_file("truncated.json");
  std::ofstream(path) << text.substr(0, 40);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}
