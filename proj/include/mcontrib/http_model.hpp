#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "httplib.h"
#include "mcontrib/error.hpp"
#include "mcontrib/model.hpp"
#include "mcontrib/protocol.hpp"

namespace mcontrib {

/// External model served over HTTP: GET <base>/hello, POST <base>/predict.
/// Each predict_batch call opens its own connection, so concurrent batches
/// from several engine workers are safe.
class HttpModel final : public Model {
 public:
  HttpModel(std::string url, std::chrono::milliseconds timeout, std::size_t max_in_flight = 4)
      : url_(std::move(url)), timeout_(timeout), max_in_flight_(std::max<std::size_t>(max_in_flight, 1)) {
    split_url();
    auto client = make_client();
    auto res = client->Get(prefix_ + "/hello");
    if (!res) throw_transport_failure(res.error(), "GET /hello");
    if (res->status != 200) {
      throw TransportError("GET " + url_ + "/hello returned HTTP " + std::to_string(res->status) + ": " +
                           detail::excerpt(res->body));
    }
    handshake_ = protocol::parse_handshake(res->body);
  }

  ModelInfo info() const override {
    ModelInfo mi;
    mi.name = handshake_.name;
    mi.protocol_version = handshake_.version;
    mi.output_dim = handshake_.output_dim;
    mi.batch_limit = handshake_.batch;
    mi.max_concurrency = max_in_flight_;
    mi.bit_exact = false;
    return mi;
  }

  std::string identity() const override {
    return "http:" + url_ + (handshake_.name.empty() ? "" : " (" + handshake_.name + ")");
  }

  const protocol::Handshake& metadata() const { return handshake_; }

  std::vector<OutputVector> predict_batch(std::span<const Sample> inputs) override {
    if (inputs.size() > handshake_.batch) {
      throw ModelError("batch of " + std::to_string(inputs.size()) + " exceeds the model's batch limit " +
                       std::to_string(handshake_.batch));
    }
    auto client = make_client();
    std::vector<OutputVector> out;
    out.reserve(inputs.size());
    for (std::size_t q = 0; q < inputs.size(); ++q) {
      const long index = static_cast<long>(q);
      const std::int64_t id = static_cast<std::int64_t>(q);
      auto res = client->Post(prefix_ + "/predict", protocol::encode_predict(id, inputs[q]), "application/json");
      if (!res) throw_transport_failure(res.error(), "POST /predict", index);
      try {
        if (res->status != 200) {
          // An error body in protocol form is the model's own report.
          protocol::Response r;
          bool is_protocol_error = false;
          try {
            r = protocol::parse_response(res->body);
            is_protocol_error = r.error.has_value();
          } catch (const ModelError&) {
          }
          if (is_protocol_error) throw RemoteModelError("model reported an error: " + detail::excerpt(*r.error));
          throw TransportError("POST " + url_ + "/predict returned HTTP " + std::to_string(res->status) + ": " +
                               detail::excerpt(res->body));
        }
        out.push_back(protocol::expect_output(res->body, id));
        check_output(out.back(), handshake_.output_dim, "POST /predict");
      } catch (const TimeoutError& e) {
        throw TimeoutError(e.what(), index);
      } catch (const TransportError& e) {
        throw TransportError(e.what(), index);
      } catch (const RemoteModelError& e) {
        throw RemoteModelError(e.what(), index);
      } catch (const MalformedResponseError& e) {
        throw MalformedResponseError(e.what(), index);
      } catch (const OutputLengthError& e) {
        throw OutputLengthError(e.what(), index);
      } catch (const NonFiniteOutputError& e) {
        throw NonFiniteOutputError(e.what(), index);
      }
    }
    return out;
  }

 private:
  void split_url() {
    const auto scheme = url_.find("://");
    const auto path_start = url_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start == std::string::npos) {
      origin_ = url_;
    } else {
      origin_ = url_.substr(0, path_start);
      prefix_ = url_.substr(path_start);
      while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }
    if (scheme == std::string::npos) origin_ = "http://" + origin_;
    if (origin_.rfind("https://", 0) == 0) throw TransportError("https model endpoints are not supported: " + url_);
  }

  std::unique_ptr<httplib::Client> make_client() const {
    auto client = std::make_unique<httplib::Client>(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client->set_connection_timeout(secs.count(), usecs.count());
    client->set_read_timeout(secs.count(), usecs.count());
    client->set_write_timeout(secs.count(), usecs.count());
    return client;
  }

  [[noreturn]] void throw_transport_failure(httplib::Error err, const std::string& what, long index = -1) const {
    const std::string msg = what + " to " + url_ + " failed: " + httplib::to_string(err);
    if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) {
      throw TimeoutError(msg + " (timeout " + std::to_string(timeout_.count()) + " ms)", index);
    }
    throw TransportError(msg, index);
  }

  std::string url_;
  std::string origin_;
  std::string prefix_;
  std::chrono::milliseconds timeout_;
  std::size_t max_in_flight_;
  protocol::Handshake handshake_;
};

}  // namespace mcontrib
