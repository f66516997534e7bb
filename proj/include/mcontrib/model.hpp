#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mcontrib/error.hpp"
#include "mcontrib/json_util.hpp"
#include "mcontrib/tensor.hpp"

namespace mcontrib {

/// Raw model output for one sample; length C, fixed for a run.
using OutputVector = std::vector<double>;

struct ModelInfo {
  std::string name;
  std::string protocol_version;
  std::size_t output_dim = 0;  // 0 until discovered
  std::size_t batch_limit = 1;
  std::size_t max_concurrency = 1;
  bool bit_exact = true;  // built-ins reproduce outputs bit for bit
};

/// Black-box prediction boundary. Implementations must be deterministic.
class Model {
 public:
  virtual ~Model() = default;

  virtual ModelInfo info() const = 0;

  /// Short identifier recorded in reports, e.g. "builtin:linear#3fa2...".
  virtual std::string identity() const = 0;

  /// Order-preserving batch evaluation. `inputs.size()` must not exceed
  /// `info().batch_limit`.
  virtual std::vector<OutputVector> predict_batch(std::span<const Sample> inputs) = 0;

  OutputVector predict(const Sample& input) { return predict_batch(std::span<const Sample>(&input, 1)).at(0); }
};

/// Throws if `output` is not finite or its length drifts from `expected_dim`
/// (0 accepts any nonzero length).
inline void check_output(const OutputVector& output, std::size_t expected_dim, const std::string& context) {
  if (output.empty()) throw OutputLengthError(context + ": model returned an empty output vector");
  if (expected_dim != 0 && output.size() != expected_dim) {
    throw OutputLengthError(context + ": output length " + std::to_string(output.size()) + " differs from " +
                            std::to_string(expected_dim));
  }
  for (std::size_t c = 0; c < output.size(); ++c) {
    if (!std::isfinite(output[c])) {
      throw NonFiniteOutputError(context + ": output component " + std::to_string(c) + " is not finite");
    }
  }
}

// --- post-transform --------------------------------------------------------

enum class PostTransform { None, Softmax, Sigmoid };

inline std::string to_string(PostTransform t) {
  switch (t) {
    case PostTransform::Softmax: return "softmax";
    case PostTransform::Sigmoid: return "sigmoid";
    default: return "none";
  }
}

inline PostTransform parse_post_transform(const std::string& name) {
  if (name == "none") return PostTransform::None;
  if (name == "softmax") return PostTransform::Softmax;
  if (name == "sigmoid") return PostTransform::Sigmoid;
  throw Error("unknown post-transform '" + name + "' (expected none|softmax|sigmoid)");
}

inline void softmax_inplace(OutputVector& v) {
  const double top = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double& x : v) {
    x = std::exp(x - top);
    total += x;
  }
  for (double& x : v) x /= total;
}

inline void apply_post_transform(PostTransform transform, OutputVector& v) {
  if (v.empty()) return;
  switch (transform) {
    case PostTransform::Softmax: softmax_inplace(v); break;
    case PostTransform::Sigmoid:
      for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
      break;
    case PostTransform::None: break;
  }
}

// --- built-in models -------------------------------------------------------

/// Weights of one modality: dense rows (one per output class) for tensors, or
/// a token vocabulary (token -> per-class weight) for text.
struct ModalityWeights {
  std::vector<std::vector<double>> dense;
  std::map<std::string, std::vector<double>> vocab;
};

struct BuiltinSpec;

/// p[c] = bias[c] + sum over modalities of w_c . x
struct LinearFusion {
  std::map<std::string, ModalityWeights> weights;
  std::vector<double> bias;
};

/// softmax(LinearFusion)
struct SoftmaxLinear {
  LinearFusion linear;
};

struct Constant {
  OutputVector output;
};

/// Evaluates `inner` after replacing every other modality with a fixed
/// neutral value (zeros, or an empty token list), so the output depends on
/// modality `index` alone.
struct SingleModality {
  std::size_t index = 0;
  std::shared_ptr<const BuiltinSpec> inner;
};

struct BuiltinSpec {
  std::variant<LinearFusion, SoftmaxLinear, Constant, SingleModality> variant;
};

namespace detail {

inline std::size_t linear_output_dim(const LinearFusion& lin) {
  std::size_t dim = lin.bias.size();
  auto merge = [&](std::size_t d, const std::string& where) {
    if (d == 0) return;
    if (dim == 0) dim = d;
    if (dim != d) throw Error("linear model: " + where + " implies " + std::to_string(d) + " outputs, expected " +
                              std::to_string(dim));
  };
  for (const auto& [name, w] : lin.weights) {
    merge(w.dense.size(), "weights of '" + name + "'");
    for (const auto& [tok, row] : w.vocab) merge(row.size(), "vocab entry '" + tok + "' of '" + name + "'");
  }
  return dim == 0 ? 1 : dim;
}

inline OutputVector eval_linear(const LinearFusion& lin, std::size_t dim, const Sample& input) {
  OutputVector out(dim, 0.0);
  for (std::size_t c = 0; c < dim && c < lin.bias.size(); ++c) out[c] = lin.bias[c];
  for (const auto& named : input) {
    auto it = lin.weights.find(named.name);
    if (it == lin.weights.end()) continue;
    const ModalityWeights& w = it->second;
    if (const auto* t = std::get_if<Tensor>(&named.value)) {
      for (std::size_t c = 0; c < w.dense.size(); ++c) {
        const auto& row = w.dense[c];
        if (row.size() != t->size()) {
          throw ModelError("linear model: modality '" + named.name + "' has " + std::to_string(t->size()) +
                           " features but weight row " + std::to_string(c) + " has " + std::to_string(row.size()));
        }
        double acc = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) acc += row[j] * t->data[j];
        out[c] += acc;
      }
    } else {
      for (const auto& token : std::get<TokenList>(named.value)) {
        auto v = w.vocab.find(token);
        if (v == w.vocab.end()) continue;
        for (std::size_t c = 0; c < v->second.size(); ++c) out[c] += v->second[c];
      }
    }
  }
  return out;
}

inline std::size_t spec_output_dim(const BuiltinSpec& spec) {
  return std::visit(
      [](const auto& v) -> std::size_t {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, LinearFusion>) return linear_output_dim(v);
        if constexpr (std::is_same_v<T, SoftmaxLinear>) return linear_output_dim(v.linear);
        if constexpr (std::is_same_v<T, Constant>) return v.output.size();
        if constexpr (std::is_same_v<T, SingleModality>) {
          if (!v.inner) throw Error("single-modality model needs an inner model");
          return spec_output_dim(*v.inner);
        }
      },
      spec.variant);
}

inline Sample neutralize_except(const Sample& input, std::size_t keep) {
  Sample out;
  out.reserve(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (i == keep) {
      out.push_back(input[i]);
    } else if (const auto* t = std::get_if<Tensor>(&input[i].value)) {
      out.push_back({input[i].name, Tensor::zeros(t->shape)});
    } else {
      out.push_back({input[i].name, TokenList{}});
    }
  }
  return out;
}

inline OutputVector eval_spec(const BuiltinSpec& spec, std::size_t dim, const Sample& input) {
  return std::visit(
      [&](const auto& v) -> OutputVector {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, LinearFusion>) return eval_linear(v, dim, input);
        if constexpr (std::is_same_v<T, SoftmaxLinear>) {
          OutputVector out = eval_linear(v.linear, dim, input);
          softmax_inplace(out);
          return out;
        }
        if constexpr (std::is_same_v<T, Constant>) return v.output;
        if constexpr (std::is_same_v<T, SingleModality>) {
          if (v.index >= input.size()) {
            throw ModelError("single-modality model keeps modality " + std::to_string(v.index) + " but input has " +
                             std::to_string(input.size()));
          }
          return eval_spec(*v.inner, dim, neutralize_except(input, v.index));
        }
      },
      spec.variant);
}

inline const char* spec_kind(const BuiltinSpec& spec) {
  static constexpr const char* names[] = {"linear", "softmax_linear", "constant", "single"};
  return names[spec.variant.index()];
}

inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

// JSON form of a built-in spec:
//   {"type":"linear", "weights":{"<modality>": [w...] | [[w...] per class] |
//                                 {"vocab": {"<token>": w | [w...]}}},
//    "bias": b | [b...]}
//   {"type":"softmax_linear", ...same fields...}
//   {"type":"constant", "output":[...]}
//   {"type":"single", "modality": <index>, "inner": {...}}
inline BuiltinSpec parse_builtin_spec(const nlohmann::json& j);

namespace detail {

inline std::vector<double> number_or_row(const nlohmann::json& j, const std::string& where) {
  if (j.is_number()) return {j.get<double>()};
  if (j.is_array()) {
    std::vector<double> row;
    for (const auto& v : j) {
      if (!v.is_number()) throw Error(where + ": expected numbers");
      row.push_back(v.get<double>());
    }
    return row;
  }
  throw Error(where + ": expected a number or an array of numbers");
}

inline LinearFusion parse_linear(const nlohmann::json& j) {
  LinearFusion lin;
  if (!j.contains("weights") || !j["weights"].is_object()) throw Error("linear model: missing object field 'weights'");
  for (const auto& [name, w] : j["weights"].items()) {
    ModalityWeights mw;
    const std::string where = "linear model weights of '" + name + "'";
    if (w.is_object()) {
      if (!w.contains("vocab") || !w["vocab"].is_object()) throw Error(where + ": expected a 'vocab' object");
      for (const auto& [tok, val] : w["vocab"].items()) mw.vocab[tok] = number_or_row(val, where);
    } else if (w.is_array() && !w.empty() && w.front().is_array()) {
      for (const auto& row : w) mw.dense.push_back(number_or_row(row, where));
    } else if (w.is_array()) {
      mw.dense.push_back(number_or_row(w, where));
    } else {
      throw Error(where + ": expected an array or a vocab object");
    }
    lin.weights.emplace(name, std::move(mw));
  }
  if (j.contains("bias")) lin.bias = number_or_row(j["bias"], "linear model bias");
  linear_output_dim(lin);
  return lin;
}

}  // namespace detail

inline BuiltinSpec parse_builtin_spec(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw Error("built-in model spec must be an object with a string 'type'");
  }
  const std::string type = j["type"];
  if (type == "linear") return BuiltinSpec{detail::parse_linear(j)};
  if (type == "softmax_linear") return BuiltinSpec{SoftmaxLinear{detail::parse_linear(j)}};
  if (type == "constant") {
    if (!j.contains("output")) throw Error("constant model: missing 'output'");
    auto out = detail::number_or_row(j["output"], "constant model output");
    if (out.empty()) throw Error("constant model: output must be nonempty");
    return BuiltinSpec{Constant{std::move(out)}};
  }
  if (type == "single") {
    if (!j.contains("modality") || !detail::is_index(j["modality"])) {
      throw Error("single-modality model: 'modality' must be a nonnegative index");
    }
    if (!j.contains("inner")) throw Error("single-modality model: missing 'inner'");
    auto inner = std::make_shared<const BuiltinSpec>(parse_builtin_spec(j["inner"]));
    return BuiltinSpec{SingleModality{j["modality"].get<std::size_t>(), std::move(inner)}};
  }
  throw Error("unknown built-in model type '" + type + "' (expected linear|softmax_linear|constant|single)");
}

/// In-process model evaluated from a BuiltinSpec. Pure and thread-safe.
class BuiltinModel final : public Model {
 public:
  explicit BuiltinModel(BuiltinSpec spec, std::string fingerprint = {})
      : spec_(std::move(spec)), dim_(detail::spec_output_dim(spec_)), fingerprint_(std::move(fingerprint)) {}

  static BuiltinModel from_json(const nlohmann::json& j) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(detail::fnv1a(j.dump())));
    return BuiltinModel(parse_builtin_spec(j), hex);
  }

  ModelInfo info() const override {
    ModelInfo mi;
    mi.name = std::string("builtin:") + detail::spec_kind(spec_);
    mi.protocol_version = "builtin";
    mi.output_dim = dim_;
    mi.batch_limit = 4096;
    mi.max_concurrency = 64;
    mi.bit_exact = true;
    return mi;
  }

  std::string identity() const override {
    std::string id = std::string("builtin:") + detail::spec_kind(spec_);
    if (!fingerprint_.empty()) id += "#" + fingerprint_;
    return id;
  }

  std::vector<OutputVector> predict_batch(std::span<const Sample> inputs) override {
    std::vector<OutputVector> out;
    out.reserve(inputs.size());
    for (const auto& s : inputs) out.push_back(detail::eval_spec(spec_, dim_, s));
    return out;
  }

  const BuiltinSpec& spec() const { return spec_; }

 private:
  BuiltinSpec spec_;
  std::size_t dim_;
  std::string fingerprint_;
};

}  // namespace mcontrib
