#pragma once

#include <cmath>
#include <cstdint>

namespace covkl {

/// Mean and sum of squared deviations, mergeable in a fixed order (Chan et al.).
struct RunningStats {
  std::int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }

  void merge(const RunningStats& other) {
    if (other.count == 0) return;
    if (count == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(count);
    const double nb = static_cast<double>(other.count);
    const double delta = other.mean - mean;
    const double total = na + nb;
    mean += delta * nb / total;
    m2 += other.m2 + delta * delta * na * nb / total;
    count += other.count;
  }

  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double std_dev() const { return std::sqrt(variance()); }
  double std_error() const { return count > 0 ? std_dev() / std::sqrt(static_cast<double>(count)) : 0.0; }
};

}  // namespace covkl
