#pragma once

// Wire protocol version 1: newline-delimited UTF-8 JSON messages.
//
//   hello     {"op":"hello"}
//          -> {"version":"1","output_dim":C,"batch":B,"name":"..."}
//   predict   {"id":7,"op":"predict","inputs":{"img":{"shape":[..],"data":[..]},
//                                              "report":{"tokens":[..]}}}
//          -> {"id":7,"output":[..]}  or  {"id":7,"error":"..."}
//
// The same payloads travel over HTTP as GET /hello and POST /predict.

#include <cmath>
#include <cstdint>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mcontrib/error.hpp"
#include "mcontrib/json_util.hpp"
#include "mcontrib/model.hpp"
#include "mcontrib/tensor.hpp"

namespace mcontrib::protocol {

inline constexpr const char* version = "1";

struct Handshake {
  std::string name;
  std::string version;
  std::size_t output_dim = 0;
  std::size_t batch = 1;
};

inline std::string encode_hello() { return R"({"op":"hello"})"; }

inline nlohmann::ordered_json encode_inputs(const Sample& sample) {
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  for (const auto& named : sample) {
    nlohmann::ordered_json entry;
    if (const auto* t = std::get_if<Tensor>(&named.value)) {
      entry["shape"] = t->shape;
      entry["data"] = t->data;
    } else {
      entry["tokens"] = std::get<TokenList>(named.value);
    }
    inputs[named.name] = std::move(entry);
  }
  return inputs;
}

/// One request line (no trailing newline). Doubles are written with
/// round-trip precision.
inline std::string encode_predict(std::int64_t id, const Sample& sample) {
  nlohmann::ordered_json msg;
  msg["id"] = id;
  msg["op"] = "predict";
  msg["inputs"] = encode_inputs(sample);
  return msg.dump();
}

inline nlohmann::json parse_message(const std::string& line, const char* what) {
  try {
    auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw MalformedResponseError(std::string(what) + " is not a JSON object: " + detail::excerpt(line));
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponseError(std::string(what) + " is not valid JSON (" + e.what() + "): " + detail::excerpt(line));
  }
}

/// Validates a hello reply. Any version other than "1" is refused.
inline Handshake parse_handshake(const std::string& line) {
  const auto j = parse_message(line, "handshake reply");
  Handshake hs;
  if (!j.contains("version") || !j["version"].is_string()) {
    throw ProtocolError("handshake reply lacks a string 'version': " + detail::excerpt(line));
  }
  hs.version = j["version"].get<std::string>();
  if (hs.version != version) {
    throw ProtocolError("model speaks protocol version " + hs.version + " but this analyzer supports version " +
                        version + "; upgrade the analyzer or run the adapter in version-1 mode");
  }
  if (!j.contains("output_dim") || !detail::is_index(j["output_dim"]) || j["output_dim"].get<std::size_t>() == 0) {
    throw ProtocolError("handshake reply lacks a positive integer 'output_dim': " + detail::excerpt(line));
  }
  hs.output_dim = j["output_dim"].get<std::size_t>();
  if (j.contains("batch")) {
    if (!detail::is_index(j["batch"]) || j["batch"].get<std::size_t>() == 0) {
      throw ProtocolError("handshake 'batch' must be a positive integer: " + detail::excerpt(line));
    }
    hs.batch = j["batch"].get<std::size_t>();
  }
  if (j.contains("name") && j["name"].is_string()) hs.name = j["name"].get<std::string>();
  return hs;
}

/// A decoded predict reply: `id` is empty when the peer sent null.
struct Response {
  std::optional<std::int64_t> id;
  std::optional<OutputVector> output;
  std::optional<std::string> error;
};

inline Response parse_response(const std::string& line) {
  nlohmann::json j;
  try {
    j = parse_message(line, "predict reply");
  } catch (const MalformedResponseError&) {
    // Python's json module writes bare NaN / Infinity unless told otherwise.
    static const std::regex non_finite(R"([\[,:]\s*-?(NaN|Infinity)\b)");
    if (std::regex_search(line, non_finite)) {
      throw NonFiniteOutputError("predict reply carries NaN or Infinity: " + detail::excerpt(line));
    }
    throw;
  }
  Response r;
  if (!j.contains("id")) throw MalformedResponseError("predict reply lacks 'id': " + detail::excerpt(line));
  if (j["id"].is_number_integer()) {
    r.id = j["id"].get<std::int64_t>();
  } else if (!j["id"].is_null()) {
    throw MalformedResponseError("predict reply 'id' must be an integer or null: " + detail::excerpt(line));
  }
  if (j.contains("error")) {
    r.error = j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump();
    return r;
  }
  if (!j.contains("output") || !j["output"].is_array()) {
    throw MalformedResponseError("predict reply lacks an 'output' array: " + detail::excerpt(line));
  }
  OutputVector out;
  for (const auto& v : j["output"]) {
    if (!v.is_number()) {
      throw NonFiniteOutputError("predict reply carries a non-numeric output entry: " + detail::excerpt(line));
    }
    out.push_back(v.get<double>());
  }
  r.output = std::move(out);
  return r;
}

/// Unpacks a reply that must answer request `expected_id`.
inline OutputVector expect_output(const std::string& line, std::int64_t expected_id) {
  Response r = parse_response(line);
  if (r.error) {
    throw RemoteModelError("model reported an error for request " + std::to_string(expected_id) + ": " +
                           detail::excerpt(*r.error));
  }
  if (!r.id || *r.id != expected_id) {
    throw MalformedResponseError("reply id " + (r.id ? std::to_string(*r.id) : std::string("null")) +
                                 " does not match request " + std::to_string(expected_id));
  }
  return std::move(*r.output);
}

// --- server side (adapters, test doubles) ----------------------------------

struct Request {
  std::string op;
  std::optional<std::int64_t> id;
  Sample inputs;
};

/// Parses one request line. Input order is preserved.
inline Request parse_request(const std::string& line) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponseError(std::string("request is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("op") || !j["op"].is_string()) {
    throw MalformedResponseError("request lacks a string 'op'");
  }
  Request r;
  r.op = j["op"].get<std::string>();
  if (j.contains("id") && j["id"].is_number_integer()) r.id = j["id"].get<std::int64_t>();
  if (r.op == "predict") {
    if (!r.id) throw MalformedResponseError("predict request lacks an integer 'id'");
    if (!j.contains("inputs")) throw MalformedResponseError("predict request lacks 'inputs'");
    try {
      Sample sample;
      for (const auto& [name, entry] : j["inputs"].items()) {
        if (entry.contains("tokens")) {
          sample.push_back({name, entry["tokens"].get<TokenList>()});
        } else {
          sample.push_back({name, Tensor(entry.at("shape").get<std::vector<std::size_t>>(),
                                         entry.at("data").get<std::vector<double>>())});
        }
      }
      r.inputs = std::move(sample);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedResponseError(std::string("bad 'inputs': ") + e.what());
    }
  }
  return r;
}

inline std::string encode_handshake(const Handshake& hs) {
  nlohmann::ordered_json j;
  j["version"] = hs.version;
  j["output_dim"] = hs.output_dim;
  j["batch"] = hs.batch;
  j["name"] = hs.name;
  return j.dump();
}

inline std::string encode_output(std::optional<std::int64_t> id, const OutputVector& output) {
  nlohmann::ordered_json j;
  j["id"] = id ? nlohmann::ordered_json(*id) : nlohmann::ordered_json(nullptr);
  j["output"] = output;
  return j.dump();
}

inline std::string encode_error(std::optional<std::int64_t> id, const std::string& message) {
  nlohmann::ordered_json j;
  j["id"] = id ? nlohmann::ordered_json(*id) : nlohmann::ordered_json(nullptr);
  j["error"] = message;
  return j.dump();
}

}  // namespace mcontrib::protocol
