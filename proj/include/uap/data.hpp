#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uap {

inline constexpr std::size_t kCmapssSettings = 3;
inline constexpr std::size_t kCmapssSensors = 21;
inline constexpr std::size_t kCmapssColumns = 2 + kCmapssSettings + kCmapssSensors;

// One engine's run, cycles 1..T. Sensor readings are [T, n_sensors] row-major.
struct EngineSeries {
  int engine_id = 0;
  std::vector<int> cycles;
  std::vector<std::array<double, kCmapssSettings>> op_settings;
  std::size_t n_sensors = 0;
  std::vector<double> sensors;

  std::size_t length() const { return cycles.size(); }
  double sensor(std::size_t row, std::size_t col) const { return sensors[row * n_sensors + col]; }
  void validate() const;
  bool operator==(const EngineSeries&) const = default;
};

struct CmapssData {
  std::vector<EngineSeries> train;
  std::vector<EngineSeries> test;
  std::vector<double> test_final_rul;  // aligned with `test`
};

// Whitespace-separated, 26 columns per row; engines in contiguous blocks.
std::vector<EngineSeries> read_cmapss_series(const std::filesystem::path& path);
std::vector<double> read_rul_file(const std::filesystem::path& path);
CmapssData load_cmapss(const std::filesystem::path& train_path,
                       const std::filesystem::path& test_path,
                       const std::filesystem::path& rul_path);

// Shortest round-trip decimal formatting, so a re-read is exact.
void write_cmapss_series(std::span<const EngineSeries> series, const std::filesystem::path& path);
void write_rul_file(std::span<const double> ruls, const std::filesystem::path& path);

// Min/max over the training split for the non-constant sensors.
struct NormStats {
  std::size_t source_features = 0;
  std::vector<std::size_t> retained;  // indices into the raw sensor columns
  std::vector<double> min;
  std::vector<double> max;

  std::size_t features() const { return retained.size(); }
};

NormStats fit_norm(std::span<const EngineSeries> train);

struct Window {
  std::vector<double> x;  // [steps, features], values in [0, 1]
  double y = 0.0;         // RUL in cycles at end_cycle
  int engine_id = 0;
  int end_cycle = 0;
};

struct WindowSet {
  std::size_t steps = 0;
  std::size_t features = 0;
  std::vector<Window> windows;
  std::size_t skipped_engines = 0;  // shorter than `steps`
  std::size_t clamped_values = 0;   // normalized values pulled back into [0, 1]

  std::size_t size() const { return windows.size(); }
  bool empty() const { return windows.empty(); }
};

// Stride-1 sliding windows, ordered by (engine order, end_cycle). With
// final_ruls empty, each engine is taken to fail at its last cycle; otherwise
// final_ruls[i] is the RUL remaining after the last cycle of series[i].
WindowSet make_windows(std::span<const EngineSeries> series, const NormStats& stats,
                       std::size_t steps, std::optional<double> rul_cap = std::nullopt,
                       std::span<const double> final_ruls = {});

struct Dataset {
  NormStats stats;
  WindowSet train;
  WindowSet test;
};

Dataset prepare_dataset(const CmapssData& data, std::size_t steps,
                        std::optional<double> rul_cap = std::nullopt);

struct SynthOptions {
  std::size_t constant_features = 2;
  int min_life = 120;
  int max_life = 220;
  double noise = 0.02;
};

// Run-to-failure fleet: each varying feature follows a + b * (cycle / T)^c
// plus Gaussian noise, with a, b, c drawn per engine around per-feature
// baselines. `constant_features` columns hold one fixed value fleet-wide.
std::vector<EngineSeries> synth_generate(std::size_t n_engines, std::size_t n_features,
                                         std::uint64_t seed, const SynthOptions& opts = {});

// FD001-shaped data set: 21 sensors of which 7 constant, noise near a fifth
// of the degradation span, train engines run to failure, test engines
// truncated with their remaining life in test_final_rul.
CmapssData synth_cmapss(std::uint64_t seed, std::size_t n_train = 100, std::size_t n_test = 100);

}  // namespace uap
