#pragma once

#include <string>

namespace uap::fmt {

// Shortest decimal that parses back to the same double.
std::string shortest(double v);

// Fixed-point with `digits` decimals ("%.*f").
std::string fixed(double v, int digits = 2);

}  // namespace uap::fmt
