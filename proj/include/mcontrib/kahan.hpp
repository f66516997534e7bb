#pragma once

#include <span>
#include <vector>

namespace mcontrib {

/// Compensated (Kahan) running sum.
///
/// Each addition records the low-order bits lost to rounding and feeds them
/// back into the next addition.
template <typename Value = double>
struct KahanSum {
  Value sum = Value{0};
  Value compensation = Value{0};

  void add(Value value) {
    const Value y = value - compensation;
    const Value t = sum + y;
    compensation = (t - sum) - y;
    sum = t;
  }

  KahanSum& operator+=(Value value) {
    add(value);
    return *this;
  }

  Value value() const { return sum; }
};

/// Elementwise compensated accumulator for fixed-length vectors.
class KahanVector {
 public:
  KahanVector() = default;
  explicit KahanVector(std::size_t size) : sums_(size) {}

  std::size_t size() const { return sums_.size(); }

  void add(std::span<const double> values) {
    for (std::size_t c = 0; c < sums_.size(); ++c) sums_[c].add(values[c]);
  }

  std::vector<double> values() const {
    std::vector<double> out(sums_.size());
    for (std::size_t c = 0; c < sums_.size(); ++c) out[c] = sums_[c].value();
    return out;
  }

 private:
  std::vector<KahanSum<double>> sums_;
};

inline double kahan_total(std::span<const double> values) {
  KahanSum<double> acc;
  for (double v : values) acc.add(v);
  return acc.value();
}

}  // namespace mcontrib
