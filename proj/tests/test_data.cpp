#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "uap/data.hpp"
#include "uap/error.hpp"

using namespace uap;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("uap_data_" + name); }

// One engine, `length` cycles, sensor k reads base + k + cycle * slope[k].
EngineSeries ramp_engine(int id, std::size_t length, double shift = 0.0) {
  EngineSeries e;
  e.engine_id = id;
  e.n_sensors = kCmapssSensors;
  for (std::size_t c = 1; c <= length; ++c) {
    e.cycles.push_back(static_cast<int>(c));
    e.op_settings.push_back({0.001, -0.0002, 100.0});
    for (std::size_t k = 0; k < kCmapssSensors; ++k) {
      const double slope = (k % 3 == 0) ? 0.0 : 0.1 * static_cast<double>(k);
      e.sensors.push_back(shift + static_cast<double>(k) + slope * static_cast<double>(c));
    }
  }
  return e;
}

std::string row(int unit, int cycle, std::size_t columns) {
  std::string s = std::to_string(unit) + " " + std::to_string(cycle);
  for (std::size_t i = 2; i < columns; ++i) s += " 1.5";
  return s + "\n";
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Ridge least squares through the normal equations and a Cholesky solve.
std::vector<double> fit_linear(const std::vector<std::vector<double>>& xs, const std::vector<double>& ys,
                               double ridge) {
  const std::size_t d = xs.front().size() + 1;
  std::vector<double> a(d * d, 0.0), b(d, 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<double> x = xs[i];
    x.push_back(1.0);
    for (std::size_t r = 0; r < d; ++r) {
      b[r] += x[r] * ys[i];
      for (std::size_t c = 0; c < d; ++c) a[r * d + c] += x[r] * x[c];
    }
  }
  for (std::size_t r = 0; r + 1 < d; ++r) a[r * d + r] += ridge;
  for (std::size_t j = 0; j < d; ++j) {
    double s = a[j * d + j];
    for (std::size_t k = 0; k < j; ++k) s -= a[j * d + k] * a[j * d + k];
    a[j * d + j] = std::sqrt(s);
    for (std::size_t i = j + 1; i < d; ++i) {
      double t = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) t -= a[i * d + k] * a[j * d + k];
      a[i * d + j] = t / a[j * d + j];
    }
  }
  std::vector<double> z(d), w(d);
  for (std::size_t i = 0; i < d; ++i) {
    double t = b[i];
    for (std::size_t k = 0; k < i; ++k) t -= a[i * d + k] * z[k];
    z[i] = t / a[i * d + i];
  }
  for (std::size_t i = d; i-- > 0;) {
    double t = z[i];
    for (std::size_t k = i + 1; k < d; ++k) t -= a[k * d + i] * w[k];
    w[i] = t / a[i * d + i];
  }
  return w;
}

}  // namespace

TEST_CASE("C-MAPSS files round trip exactly") {
  const CmapssData d = synth_cmapss(4, 5, 4);
  const auto tr = temp_path("train.txt"), te = temp_path("test.txt"), ru = temp_path("rul.txt");
  write_cmapss_series(d.train, tr);
  write_cmapss_series(d.test, te);
  write_rul_file(d.test_final_rul, ru);
  const CmapssData back = load_cmapss(tr, te, ru);
  CHECK(back.train == d.train);
  CHECK(back.test == d.test);
  CHECK(back.test_final_rul == d.test_final_rul);
  for (const auto& p : {tr, te, ru}) fs::remove(p);
}

TEST_CASE("reader reports row-level errors with line numbers") {
  const auto p = temp_path("bad.txt");
  write(p, row(1, 1, 26) + row(1, 2, 25));
  try {
    read_cmapss_series(p);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("25") != std::string::npos);
  }
  write(p, row(1, 1, 26) + "1 2 x" + row(0, 0, 24).substr(3));
  CHECK_THROWS_AS(read_cmapss_series(p), ParseError);
  write(p, row(1, 1, 26) + row(3, 1, 26));
  try {
    read_cmapss_series(p);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("engine 2") != std::string::npos);
  }
  write(p, row(1, 1, 26) + row(1, 3, 26));
  CHECK_THROWS_AS(read_cmapss_series(p), ParseError);
  write(p, "");
  CHECK_THROWS_AS(read_cmapss_series(p), ParseError);
  CHECK_THROWS_AS(read_cmapss_series(temp_path("does_not_exist.txt")), IoError);
  fs::remove(p);
}

TEST_CASE("trailing spaces and blank lines are tolerated") {
  const auto p = temp_path("spaces.txt");
  std::string r = row(1, 1, 26);
  r.insert(r.size() - 1, "   ");
  write(p, r + "\n" + row(1, 2, 26));
  const auto s = read_cmapss_series(p);
  REQUIRE(s.size() == 1);
  CHECK(s[0].length() == 2);
  CHECK(s[0].n_sensors == 21);
  fs::remove(p);
}

TEST_CASE("RUL file must list every test engine") {
  const CmapssData d = synth_cmapss(2, 3, 3);
  const auto tr = temp_path("t2.txt"), te = temp_path("te2.txt"), ru = temp_path("r2.txt");
  write_cmapss_series(d.train, tr);
  write_cmapss_series(d.test, te);
  write(ru, "10\n20\n");
  CHECK_THROWS_AS(load_cmapss(tr, te, ru), ParseError);
  for (const auto& p : {tr, te, ru}) fs::remove(p);
}

TEST_CASE("fit_norm keeps exactly the non-constant sensors") {
  const std::vector<EngineSeries> train{ramp_engine(1, 50), ramp_engine(2, 60)};
  const NormStats s = fit_norm(train);
  CHECK(s.source_features == 21);
  CHECK(s.features() == 14);
  for (std::size_t k : s.retained) CHECK(k % 3 != 0);
  for (std::size_t i = 0; i < s.features(); ++i) CHECK(s.max[i] > s.min[i]);

  const WindowSet ws = make_windows(train, s, 60);
  REQUIRE(ws.size() == 1);
  const auto& x = ws.windows[0].x;
  CHECK(*std::min_element(x.begin(), x.end()) == 0.0);
  CHECK(*std::max_element(x.begin(), x.end()) == 1.0);

  EngineSeries flat = ramp_engine(1, 10);
  for (std::size_t r = 0; r < flat.length(); ++r) {
    for (std::size_t k = 0; k < 21; ++k) flat.sensors[r * 21 + k] = 3.0;
  }
  CHECK_THROWS_AS(fit_norm(std::vector<EngineSeries>{flat}), DomainError);
  CHECK_THROWS_AS(fit_norm(std::vector<EngineSeries>{}), DomainError);
}

TEST_CASE("window counts and train labels") {
  const std::vector<EngineSeries> train{ramp_engine(1, 100)};
  const NormStats s = fit_norm(train);
  const WindowSet ws = make_windows(train, s, 80);
  CHECK(ws.size() == 21);
  CHECK(ws.windows.back().y == 0.0);
  CHECK(ws.windows.back().end_cycle == 100);
  CHECK(ws.windows.front().y == 20.0);
  for (const auto& w : ws.windows) CHECK(w.x.size() == 80 * 14);

  const std::vector<EngineSeries> long_one{ramp_engine(1, 300)};
  const WindowSet capped = make_windows(long_one, fit_norm(long_one), 1, 130.0);
  CHECK(capped.windows.front().end_cycle == 1);
  CHECK(capped.windows.front().y == 130.0);
  CHECK(capped.windows.back().y == 0.0);

  CHECK_THROWS_AS(make_windows(train, s, 0), ConfigError);
}

TEST_CASE("window count is T - M + 1 and short engines are skipped") {
  std::vector<EngineSeries> fleet;
  for (int i = 0; i < 6; ++i) fleet.push_back(ramp_engine(i + 1, 20 + 7 * i));
  const NormStats s = fit_norm(fleet);
  const WindowSet ws = make_windows(fleet, s, 30);
  std::size_t expected = 0;
  for (const auto& e : fleet) expected += e.length() >= 30 ? e.length() - 30 + 1 : 0;
  CHECK(ws.size() == expected);
  CHECK(ws.skipped_engines == 2);
  int prev_engine = 0, prev_cycle = 0;
  for (const auto& w : ws.windows) {
    CHECK((w.engine_id > prev_engine || (w.engine_id == prev_engine && w.end_cycle > prev_cycle)));
    prev_engine = w.engine_id;
    prev_cycle = w.end_cycle;
  }
}

TEST_CASE("test labels offset by the final RUL and out-of-range values clamp") {
  const std::vector<EngineSeries> train{ramp_engine(1, 100)};
  const NormStats s = fit_norm(train);
  const std::vector<EngineSeries> test{ramp_engine(1, 50, 1000.0)};
  const std::vector<double> final_rul{12.0};
  const WindowSet ws = make_windows(test, s, 10, std::nullopt, final_rul);
  CHECK(ws.windows.back().y == 12.0);
  CHECK(ws.windows.front().y == 12.0 + 40.0);
  CHECK(ws.clamped_values > 0);
  for (const auto& w : ws.windows) {
    for (double v : w.x) CHECK((v >= 0.0 && v <= 1.0));
  }
  CHECK_THROWS_AS(make_windows(test, s, 10, std::nullopt, std::vector<double>{1.0, 2.0}),
                  DimensionError);
}

TEST_CASE("normalization is fitted on train only") {
  const std::vector<EngineSeries> train{ramp_engine(1, 100)};
  const std::vector<EngineSeries> test{ramp_engine(1, 100, 5.0)};
  const NormStats from_train = fit_norm(train);
  std::vector<EngineSeries> both = train;
  both.insert(both.end(), test.begin(), test.end());
  const NormStats leaked = fit_norm(both);
  CHECK(from_train.max != leaked.max);
  CmapssData d{train, test, {10.0}};
  const Dataset ds = prepare_dataset(d, 20);
  CHECK(ds.stats.max == from_train.max);
  CHECK(ds.stats.min == from_train.min);
}

TEST_CASE("synthetic generator is deterministic and plants constant channels") {
  const auto a = synth_generate(5, 8, 42);
  const auto b = synth_generate(5, 8, 42);
  const auto c = synth_generate(5, 8, 43);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const auto& e : a) {
    CHECK(e.length() >= 120);
    CHECK(e.length() <= 220);
    e.validate();
  }
  const NormStats s = fit_norm(a);
  CHECK(s.features() == 6);
  std::set<std::size_t> kept(s.retained.begin(), s.retained.end());
  std::size_t constant = 0;
  for (std::size_t k = 0; k < 8; ++k) {
    if (kept.count(k)) continue;
    ++constant;
    const double v0 = a[0].sensor(0, k);
    for (const auto& e : a) {
      for (std::size_t r = 0; r < e.length(); ++r) CHECK(e.sensor(r, k) == v0);
    }
  }
  CHECK(constant == 2);
  CHECK_THROWS_AS(synth_generate(0, 3, 1), ConfigError);
  CHECK_THROWS_AS(synth_generate(3, 2, 1), ConfigError);
}

TEST_CASE("FD001-shaped synthetic set keeps 14 of 21 sensors") {
  const CmapssData d = synth_cmapss(1);
  CHECK(d.train.size() == 100);
  CHECK(d.test.size() == 100);
  CHECK(d.test_final_rul.size() == 100);
  CHECK(fit_norm(d.train).features() == 14);
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    CHECK(d.test_final_rul[i] >= 5.0);
    CHECK(d.test_final_rul[i] <= 145.0);
    CHECK(d.test[i].length() >= 31);
  }
}

TEST_CASE("a linear regressor learns the synthetic data (MAPE below 40%)") {
  const CmapssData d = synth_cmapss(5, 60, 40);
  const Dataset ds = prepare_dataset(d, 20);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  for (const auto& w : ds.train.windows) {
    xs.push_back(w.x);
    ys.push_back(w.y);
  }
  const auto coef = fit_linear(xs, ys, 1e-3);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& w : ds.test.windows) {
    if (!(w.y > 0.0)) continue;
    double pred = coef.back();
    for (std::size_t i = 0; i < w.x.size(); ++i) pred += coef[i] * w.x[i];
    sum += std::fabs(pred - w.y) / w.y;
    ++n;
  }
  const double mape = 100.0 * sum / static_cast<double>(n);
  MESSAGE("linear regressor test MAPE " << mape);
  CHECK(mape < 40.0);
}
