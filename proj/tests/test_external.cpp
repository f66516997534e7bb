#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <memory>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "mcontrib/analysis.hpp"
#include "mcontrib/http_model.hpp"
#include "mcontrib/model.hpp"
#include "mcontrib/protocol.hpp"
#include "mcontrib/sample_source.hpp"
#include "mcontrib/subprocess_model.hpp"

namespace mcontrib {
namespace {

using namespace std::chrono_literals;

const nlohmann::json kSpec = {
    {"type", "linear"}, {"weights", {{"a", {{1.0, -2.0}, {0.5, 0.5}}}, {"b", {{3.0}, {-1.0}}}}}, {"bias", {0.1, 0.2}}};

std::string adapter(const std::string& mode, std::size_t batch = 4) {
  return std::string("exec ") + FAKE_ADAPTER_PATH + " --spec '" + kSpec.dump() + "' --mode " + mode + " --batch " +
         std::to_string(batch);
}

InMemoryDataset toy_data() {
  return InMemoryDataset({Sample{{"a", Tensor::vector({1, 2})}, {"b", Tensor::vector({3})}},
                          Sample{{"a", Tensor::vector({-1, 0.5})}, {"b", Tensor::vector({0.25})}},
                          Sample{{"a", Tensor::vector({4, -3})}, {"b", Tensor::vector({-2})}}});
}

AnalysisOptions entries() {
  AnalysisOptions opt;
  opt.plans.assign(2, EntryPlan{});
  opt.fills.assign(2, ZeroFill{});
  return opt;
}

TEST(SubprocessModel, HandshakeAndPredict) {
  SubprocessModel model(adapter("normal", 8), 10s);
  EXPECT_EQ(model.info().output_dim, 2u);
  EXPECT_EQ(model.info().batch_limit, 8u);
  EXPECT_EQ(model.metadata().name, "fake");
  BuiltinModel local = BuiltinModel::from_json(kSpec);
  const Sample s{{"a", Tensor::vector({1, 2})}, {"b", Tensor::vector({3})}};
  const auto remote = model.predict(s);
  const auto expected = local.predict(s);
  ASSERT_EQ(remote.size(), 2u);
  EXPECT_EQ(remote, expected);
}

TEST(SubprocessModel, AnalysisMatchesBuiltin) {
  SubprocessModel remote(adapter("normal"), 10s);
  BuiltinModel local = BuiltinModel::from_json(kSpec);
  const auto data = toy_data();
  const auto a = summarize(run_analysis(data, remote, entries()));
  const auto b = summarize(run_analysis(data, local, entries()));
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(a.m[i], b.m[i], 1e-9);
    for (std::size_t l = 0; l < b.modalities[i].mp.size(); ++l) {
      EXPECT_NEAR(a.modalities[i].mp[l], b.modalities[i].mp[l], 1e-9);
    }
  }
  EXPECT_EQ(a.model_calls, 3u * (1 + 3));
}

TEST(SubprocessModel, RejectsVersionTwo) {
  try {
    SubprocessModel model(adapter("v2"), 5s);
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("upgrade"), std::string::npos);
  }
}

TEST(SubprocessModel, RejectsMissingOutputDim) { EXPECT_THROW(SubprocessModel(adapter("no_dim"), 5s), ProtocolError); }

TEST(SubprocessModel, TimesOut) {
  SubprocessModel model(adapter("hang"), 300ms);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(model.predict(Sample{{"a", Tensor::vector({1, 2})}, {"b", Tensor::vector({3})}}), TimeoutError);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}

TEST(SubprocessModel, ErrorClassesCarryCoordinates) {
  const auto data = toy_data();
  struct Case {
    const char* mode;
    const char* expect;
  };
  for (const Case c : {Case{"malformed", "malformed"}, Case{"error", "remote"}, Case{"nan", "nonfinite"},
                       Case{"drift", "length"}, Case{"crash", "transport"}, Case{"wrong_id", "malformed"}}) {
    SCOPED_TRACE(c.mode);
    SubprocessModel model(adapter(c.mode, 1), 5s);
    std::string kind;
    std::string what;
    try {
      run_analysis(data, model, entries());
    } catch (const MalformedResponseError& e) {
      kind = "malformed", what = e.what();
    } catch (const RemoteModelError& e) {
      kind = "remote", what = e.what();
    } catch (const NonFiniteOutputError& e) {
      kind = "nonfinite", what = e.what();
    } catch (const OutputLengthError& e) {
      kind = "length", what = e.what();
    } catch (const TransportError& e) {
      kind = "transport", what = e.what();
    }
    EXPECT_EQ(kind, c.expect) << what;
    EXPECT_NE(what.find("sample '0'"), std::string::npos) << what;
  }
}

TEST(SubprocessModel, RemoteErrorNamesTheFailingPatch) {
  SubprocessModel model(adapter("error", 1), 5s);
  try {
    run_analysis(toy_data(), model, entries());
    FAIL();
  } catch (const RemoteModelError& e) {
    const std::string what = e.what();
    // The second request of sample 0 masks patch 0 of modality 'a'.
    EXPECT_NE(what.find("modality 'a', patch 0"), std::string::npos) << what;
    EXPECT_NE(what.find("CUDA out of memory"), std::string::npos) << what;
  }
}

TEST(SubprocessModel, RecheckFlagsNondeterministicAdapter) {
  SubprocessModel model(adapter("nondet"), 5s);
  AnalysisOptions opt = entries();
  opt.recheck = true;
  EXPECT_THROW(run_analysis(toy_data(), model, opt), NondeterminismError);
}

TEST(SubprocessModel, MissingExecutableIsATransportError) {
  EXPECT_THROW(SubprocessModel("exec /nonexistent/adapter", 2s), TransportError);
}

// In-process HTTP server speaking protocol v1 over a built-in model.
class HttpFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    server_.Get("/v1/hello", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(protocol::encode_handshake({"http-fake", version_, 2, 4}), "application/json");
    });
    server_.Post("/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = protocol::parse_request(req.body);
      if (fail_) {
        res.status = 500;
        res.set_content(protocol::encode_error(r.id, "model exploded"), "application/json");
        return;
      }
      if (slow_) std::this_thread::sleep_for(2s);
      res.set_content(protocol::encode_output(r.id, model_.predict(r.inputs)), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  BuiltinModel model_ = BuiltinModel::from_json(kSpec);
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::string version_ = "1";
  std::atomic<bool> fail_{false};
  std::atomic<bool> slow_{false};
};

TEST_F(HttpFixture, AnalysisMatchesBuiltin) {
  HttpModel remote(url(), 10s);
  EXPECT_EQ(remote.info().output_dim, 2u);
  AnalysisOptions opt = entries();
  opt.jobs = 4;
  const auto data = toy_data();
  const auto a = summarize(run_analysis(data, remote, opt));
  const auto b = summarize(run_analysis(data, model_, entries()));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(a.m[i], b.m[i], 1e-9);
}

TEST_F(HttpFixture, RejectsVersionTwo) {
  version_ = "2";
  EXPECT_THROW(HttpModel(url(), 5s), ProtocolError);
}

TEST_F(HttpFixture, ServerErrorIsRemoteModelError) {
  HttpModel remote(url(), 5s);
  fail_ = true;
  EXPECT_THROW(run_analysis(toy_data(), remote, entries()), RemoteModelError);
}

TEST_F(HttpFixture, SlowServerTimesOut) {
  HttpModel remote(url(), 300ms);
  slow_ = true;
  EXPECT_THROW(remote.predict(Sample{{"a", Tensor::vector({1, 2})}, {"b", Tensor::vector({3})}}), TimeoutError);
}

TEST(HttpModel, UnreachableEndpointIsATransportError) {
  EXPECT_THROW(HttpModel("http://127.0.0.1:1", 1s), TransportError);
  EXPECT_THROW(HttpModel("https://example.invalid", 1s), TransportError);
}

}  // namespace
}  // namespace mcontrib
