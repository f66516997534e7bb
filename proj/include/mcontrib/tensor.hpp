#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mcontrib/error.hpp"

namespace mcontrib {

/// Dense row-major array of reals.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (element_count(shape) != data.size()) {
      throw DatasetError("tensor payload has " + std::to_string(data.size()) +
                         " values but shape implies " + std::to_string(element_count(shape)));
    }
  }

  /// 1-D tensor holding `values`.
  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    const std::size_t n = element_count(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Whitespace-tokenized text.
using TokenList = std::vector<std::string>;

/// One modality of one sample.
using ModalityInput = std::variant<Tensor, TokenList>;

inline std::size_t element_count(const ModalityInput& input) {
  if (const auto* t = std::get_if<Tensor>(&input)) return t->size();
  return std::get<TokenList>(input).size();
}

struct NamedInput {
  std::string name;
  ModalityInput value;

  friend bool operator==(const NamedInput&, const NamedInput&) = default;
};

/// All modalities of one sample, in manifest order.
using Sample = std::vector<NamedInput>;

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "[";
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (d) out += ",";
    out += std::to_string(shape[d]);
  }
  return out + "]";
}

}  // namespace mcontrib
