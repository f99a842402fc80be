#include "cnode/common.hpp"

#include <charconv>
#include <cmath>
#include <system_error>

namespace cnode {

double Rng::normal() {
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::gamma(double alpha) {
  if (alpha < 1.0) {
    throw ContractError("Rng::gamma: alpha < 1 not supported");
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double t = 1.0 + c * x;
    if (t <= 0.0) continue;
    double v = t * t * t;
    double u = uniform();
    if (u == 0.0) continue;
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
      return d * v;
    }
  }
}

double Rng::beta(double a, double b) {
  double x = gamma(a);
  double y = gamma(b);
  return x / (x + y);
}

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& context) {
  double out = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  // Tolerate surrounding spaces (hand-edited CSVs).
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r')) --end;
  auto res = std::from_chars(begin, end, out);
  if (res.ec != std::errc() || res.ptr != end || begin == end) {
    throw DataError(context + ": not a number: '" + s + "'");
  }
  return out;
}

}  // namespace cnode
