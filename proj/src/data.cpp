#include "uap/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "uap/error.hpp"
#include "uap/format.hpp"
#include "uap/log.hpp"

namespace uap {

void EngineSeries::validate() const {
  if (op_settings.size() != cycles.size() || sensors.size() != cycles.size() * n_sensors) {
    throw DimensionError("engine " + std::to_string(engine_id) + ": column lengths disagree");
  }
  for (std::size_t i = 0; i < cycles.size(); ++i) {
    if (cycles[i] != static_cast<int>(i) + 1) {
      throw DomainError("engine " + std::to_string(engine_id) + ": cycle " +
                        std::to_string(cycles[i]) + " at row " + std::to_string(i + 1) +
                        " (cycles must run 1, 2, ...)");
    }
  }
}

// ---------------------------------------------------------------------------
// Text I/O

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <class T>
T parse_number(std::string_view tok, const std::string& file, std::size_t line) {
  T v{};
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw ParseError(file, line, "non-numeric token '" + std::string(tok) + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw ParseError(file, line, "non-finite value '" + std::string(tok) + "'");
  }
  return v;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace

std::vector<EngineSeries> read_cmapss_series(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::string file = path.string();
  std::vector<EngineSeries> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != kCmapssColumns) {
      throw ParseError(file, lineno,
                       "expected " + std::to_string(kCmapssColumns) + " columns, found " +
                           std::to_string(toks.size()));
    }
    const int unit = parse_number<int>(toks[0], file, lineno);
    const int cycle = parse_number<int>(toks[1], file, lineno);
    if (out.empty() || out.back().engine_id != unit) {
      const int expected = out.empty() ? 1 : out.back().engine_id + 1;
      if (unit != expected) {
        throw ParseError(file, lineno,
                         "engine " + std::to_string(unit) + " follows engine " +
                             std::to_string(expected - 1) + " (missing or out-of-order engine " +
                             std::to_string(expected) + ")");
      }
      out.push_back(EngineSeries{unit, {}, {}, kCmapssSensors, {}});
    }
    EngineSeries& e = out.back();
    if (cycle != static_cast<int>(e.cycles.size()) + 1) {
      throw ParseError(file, lineno,
                       "engine " + std::to_string(unit) + " cycle " + std::to_string(cycle) +
                           " does not continue from " + std::to_string(e.cycles.size()));
    }
    e.cycles.push_back(cycle);
    std::array<double, kCmapssSettings> settings{};
    for (std::size_t k = 0; k < kCmapssSettings; ++k) {
      settings[k] = parse_number<double>(toks[2 + k], file, lineno);
    }
    e.op_settings.push_back(settings);
    for (std::size_t k = 0; k < kCmapssSensors; ++k) {
      e.sensors.push_back(parse_number<double>(toks[2 + kCmapssSettings + k], file, lineno));
    }
  }
  if (out.empty()) throw ParseError(file, lineno, "no data rows");
  return out;
}

std::vector<double> read_rul_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::string file = path.string();
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 1) throw ParseError(file, lineno, "expected one value per line");
    const double v = parse_number<double>(toks[0], file, lineno);
    if (v < 0.0) throw ParseError(file, lineno, "negative RUL");
    out.push_back(v);
  }
  return out;
}

CmapssData load_cmapss(const std::filesystem::path& train_path,
                       const std::filesystem::path& test_path,
                       const std::filesystem::path& rul_path) {
  CmapssData d;
  d.train = read_cmapss_series(train_path);
  d.test = read_cmapss_series(test_path);
  d.test_final_rul = read_rul_file(rul_path);
  if (d.test_final_rul.size() != d.test.size()) {
    throw ParseError(rul_path.string(), d.test_final_rul.size(),
                     "RUL file lists " + std::to_string(d.test_final_rul.size()) +
                         " engines, test file has " + std::to_string(d.test.size()));
  }
  return d;
}

void write_cmapss_series(std::span<const EngineSeries> series, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : series) {
    e.validate();
    if (e.n_sensors != kCmapssSensors) {
      throw DimensionError("C-MAPSS files carry 21 sensors; engine " +
                           std::to_string(e.engine_id) + " has " + std::to_string(e.n_sensors));
    }
    for (std::size_t r = 0; r < e.length(); ++r) {
      std::string row = std::to_string(e.engine_id) + " " + std::to_string(e.cycles[r]);
      for (double v : e.op_settings[r]) row += " " + fmt::shortest(v);
      for (std::size_t k = 0; k < e.n_sensors; ++k) row += " " + fmt::shortest(e.sensor(r, k));
      out << row << " \n";
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_rul_file(std::span<const double> ruls, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (double v : ruls) out << fmt::shortest(v) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Normalization and windowing

NormStats fit_norm(std::span<const EngineSeries> train) {
  if (train.empty()) throw DomainError("fit_norm: empty training data");
  const std::size_t f = train.front().n_sensors;
  std::vector<double> lo(f, std::numeric_limits<double>::infinity());
  std::vector<double> hi(f, -std::numeric_limits<double>::infinity());
  std::size_t rows = 0;
  for (const auto& e : train) {
    if (e.n_sensors != f) throw DimensionError("fit_norm: engines disagree on sensor count");
    for (std::size_t r = 0; r < e.length(); ++r) {
      for (std::size_t k = 0; k < f; ++k) {
        lo[k] = std::min(lo[k], e.sensor(r, k));
        hi[k] = std::max(hi[k], e.sensor(r, k));
      }
    }
    rows += e.length();
  }
  if (rows == 0) throw DomainError("fit_norm: training data has no rows");
  NormStats s;
  s.source_features = f;
  for (std::size_t k = 0; k < f; ++k) {
    // Zero variance over the whole split <=> max == min.
    if (hi[k] > lo[k]) {
      s.retained.push_back(k);
      s.min.push_back(lo[k]);
      s.max.push_back(hi[k]);
    }
  }
  if (s.retained.empty()) throw DomainError("fit_norm: every feature is constant");
  return s;
}

WindowSet make_windows(std::span<const EngineSeries> series, const NormStats& stats,
                       std::size_t steps, std::optional<double> rul_cap,
                       std::span<const double> final_ruls) {
  if (steps < 1) throw ConfigError("window length must be >= 1");
  if (!final_ruls.empty() && final_ruls.size() != series.size()) {
    throw DimensionError("make_windows: " + std::to_string(final_ruls.size()) + " final RULs for " +
                         std::to_string(series.size()) + " engines");
  }
  if (rul_cap && !(*rul_cap >= 0.0)) throw ConfigError("rul_cap must be >= 0");
  WindowSet ws;
  ws.steps = steps;
  ws.features = stats.features();

  for (std::size_t e = 0; e < series.size(); ++e) {
    const EngineSeries& s = series[e];
    if (s.n_sensors != stats.source_features) {
      throw DimensionError("engine " + std::to_string(s.engine_id) + " has " +
                           std::to_string(s.n_sensors) + " sensors, stats expect " +
                           std::to_string(stats.source_features));
    }
    const std::size_t t_len = s.length();
    if (t_len < steps) {
      ++ws.skipped_engines;
      continue;
    }
    // Normalize the whole engine once.
    std::vector<double> norm(t_len * ws.features);
    for (std::size_t r = 0; r < t_len; ++r) {
      for (std::size_t k = 0; k < ws.features; ++k) {
        double v = (s.sensor(r, stats.retained[k]) - stats.min[k]) / (stats.max[k] - stats.min[k]);
        if (v < 0.0 || v > 1.0) {
          v = std::clamp(v, 0.0, 1.0);
          ++ws.clamped_values;
        }
        norm[r * ws.features + k] = v;
      }
    }
    const double tail = final_ruls.empty() ? 0.0 : final_ruls[e];
    for (std::size_t end = steps; end <= t_len; ++end) {
      Window w;
      w.engine_id = s.engine_id;
      w.end_cycle = s.cycles[end - 1];
      w.y = tail + static_cast<double>(s.cycles.back() - w.end_cycle);
      if (rul_cap) w.y = std::min(w.y, *rul_cap);
      w.x.assign(norm.begin() + static_cast<std::ptrdiff_t>((end - steps) * ws.features),
                 norm.begin() + static_cast<std::ptrdiff_t>(end * ws.features));
      ws.windows.push_back(std::move(w));
    }
  }
  if (ws.skipped_engines > 0) {
    log::info(std::to_string(ws.skipped_engines) + " engine(s) shorter than " +
              std::to_string(steps) + " cycles skipped");
  }
  return ws;
}

Dataset prepare_dataset(const CmapssData& data, std::size_t steps, std::optional<double> rul_cap) {
  Dataset d;
  d.stats = fit_norm(data.train);
  d.train = make_windows(data.train, d.stats, steps, rul_cap);
  d.test = make_windows(data.test, d.stats, steps, rul_cap, data.test_final_rul);
  if (d.train.empty()) throw DomainError("no engine in the training split reaches the window length");
  if (d.test.clamped_values > 0) {
    log::info(std::to_string(d.test.clamped_values) +
              " test value(s) outside the training range clamped to [0, 1]");
  }
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic fleets

std::vector<EngineSeries> synth_generate(std::size_t n_engines, std::size_t n_features,
                                         std::uint64_t seed, const SynthOptions& opts) {
  if (n_engines < 1 || n_features < 1) throw ConfigError("synth: need at least one engine and feature");
  if (opts.constant_features >= n_features) {
    throw ConfigError("synth: constant features must leave at least one varying feature");
  }
  if (opts.min_life < 1 || opts.max_life < opts.min_life) throw ConfigError("synth: bad lifetime range");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Constant columns spread evenly over the feature index range.
  std::vector<bool> constant(n_features, false);
  for (std::size_t k = 0; k < opts.constant_features; ++k) {
    constant[(2 * k + 1) * n_features / (2 * opts.constant_features)] = true;
  }
  struct Baseline {
    double level, slope, fixed;
  };
  std::vector<Baseline> base(n_features);
  for (auto& b : base) {
    b.level = 0.2 + 0.6 * unit(rng);
    b.slope = (0.3 + 0.7 * unit(rng)) * (unit(rng) < 0.5 ? -1.0 : 1.0);
    b.fixed = 100.0 * unit(rng);
  }

  std::uniform_int_distribution<int> life(opts.min_life, opts.max_life);
  std::vector<EngineSeries> fleet;
  fleet.reserve(n_engines);
  for (std::size_t e = 0; e < n_engines; ++e) {
    EngineSeries s;
    s.engine_id = static_cast<int>(e) + 1;
    s.n_sensors = n_features;
    const int t_fail = life(rng);
    std::vector<double> a(n_features), b(n_features), c(n_features);
    for (std::size_t k = 0; k < n_features; ++k) {
      a[k] = base[k].level + 0.03 * gauss(rng);
      b[k] = base[k].slope * (0.85 + 0.3 * unit(rng));
      c[k] = 1.5 + unit(rng);
    }
    for (int cyc = 1; cyc <= t_fail; ++cyc) {
      s.cycles.push_back(cyc);
      s.op_settings.push_back({0.002 * gauss(rng), 0.0003 * gauss(rng), 100.0});
      const double u = static_cast<double>(cyc) / static_cast<double>(t_fail);
      for (std::size_t k = 0; k < n_features; ++k) {
        s.sensors.push_back(constant[k] ? base[k].fixed
                                        : a[k] + b[k] * std::pow(u, c[k]) + opts.noise * gauss(rng));
      }
    }
    fleet.push_back(std::move(s));
  }
  return fleet;
}

CmapssData synth_cmapss(std::uint64_t seed, std::size_t n_train, std::size_t n_test) {
  SynthOptions opts;
  opts.constant_features = 7;
  opts.min_life = 128;
  opts.max_life = 362;
  // Within-engine noise near a fifth of the degradation span after scaling.
  opts.noise = 0.134;
  auto fleet = synth_generate(n_train + n_test, kCmapssSensors, seed, opts);

  CmapssData d;
  d.train.assign(fleet.begin(), fleet.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
  for (std::size_t i = 0; i < n_test; ++i) {
    EngineSeries s = std::move(fleet[n_train + i]);
    const int t_fail = static_cast<int>(s.length());
    // Observed prefix of at least 31 cycles; remaining life in [5, 145].
    const int max_rul = std::max(5, std::min(145, t_fail - 31));
    const int rul = std::uniform_int_distribution<int>(5, max_rul)(rng);
    const std::size_t keep = static_cast<std::size_t>(t_fail - rul);
    s.engine_id = static_cast<int>(i) + 1;
    s.cycles.resize(keep);
    s.op_settings.resize(keep);
    s.sensors.resize(keep * s.n_sensors);
    d.test.push_back(std::move(s));
    d.test_final_rul.push_back(static_cast<double>(rul));
  }
  return d;
}

}  // namespace uap
