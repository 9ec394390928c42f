#pragma once

// Brute-force references for the evaluation metrics, shared by the unit and
// acceptance tests.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace oracle {

inline double fooling(const std::vector<double>& p, const std::vector<double>& y, double alpha) {
  int fooled = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > (1.0 + alpha) * y[i]) ++fooled;
  }
  return 100.0 * fooled / static_cast<double>(p.size());
}

// Non-negative doubles added exactly into a wide binary integer whose bit j
// weighs 2^(j - kOffset), then rounded half-to-even once.
inline double exact_sum(const std::vector<double>& xs) {
  constexpr int kOffset = 1200;
  std::vector<std::uint32_t> acc(80, 0);
  auto add_bit = [&](int pos) {
    std::size_t w = static_cast<std::size_t>(pos / 32);
    std::uint64_t carry = std::uint64_t{1} << (pos % 32);
    while (carry) {
      const std::uint64_t v = acc[w] + carry;
      acc[w++] = static_cast<std::uint32_t>(v);
      carry = v >> 32;
    }
  };
  for (double x : xs) {
    if (!(x >= 0.0)) throw std::invalid_argument("exact_sum: negative term");
    if (x == 0.0) continue;
    int e = 0;
    const double m = std::frexp(x, &e);
    const auto mant = static_cast<std::uint64_t>(std::ldexp(m, 53));
    for (int b = 0; b < 53; ++b) {
      if ((mant >> b) & 1) add_bit(e - 53 + kOffset + b);
    }
  }
  auto bit = [&](int pos) { return pos >= 0 && ((acc[pos / 32] >> (pos % 32)) & 1); };
  int top = static_cast<int>(acc.size()) * 32 - 1;
  while (top >= 0 && !bit(top)) --top;
  if (top < 0) return 0.0;
  std::uint64_t mant = 0;
  for (int b = top; b > top - 53; --b) mant = (mant << 1) | static_cast<std::uint64_t>(bit(b));
  const bool round = bit(top - 53);
  bool sticky = false;
  for (int b = top - 54; b >= 0 && !sticky; --b) sticky = bit(b);
  if (round && (sticky || (mant & 1))) ++mant;
  return std::ldexp(static_cast<double>(mant), top - 52 - kOffset);
}

inline double mape(const std::vector<double>& p, const std::vector<double>& y) {
  std::vector<double> terms;
  for (std::size_t i = 0; i < p.size(); ++i) terms.push_back(std::fabs(p[i] - y[i]) / y[i]);
  return 100.0 * exact_sum(terms) / static_cast<double>(p.size());
}

}  // namespace oracle
