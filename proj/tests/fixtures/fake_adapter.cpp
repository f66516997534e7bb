// Protocol-v1 stdio server backed by a built-in model, with switches that
// make it misbehave in specific ways.
//
//   fake_adapter --spec '<builtin json>' [--mode normal|v2|no_dim|malformed|
//                nondet|hang|nan|drift|error|crash|wrong_id] [--batch B]

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include "json.hpp"
#include "mcontrib/model.hpp"
#include "mcontrib/protocol.hpp"

namespace protocol = mcontrib::protocol;

int main(int argc, char** argv) {
  std::string spec_text;
  std::string mode = "normal";
  std::size_t batch = 4;
  for (int a = 1; a + 1 < argc; a += 2) {
    const std::string flag = argv[a];
    if (flag == "--spec") spec_text = argv[a + 1];
    if (flag == "--mode") mode = argv[a + 1];
    if (flag == "--batch") batch = std::stoul(argv[a + 1]);
  }
  auto model = mcontrib::BuiltinModel::from_json(nlohmann::json::parse(spec_text));
  const std::size_t dim = model.info().output_dim;

  std::size_t served = 0;
  std::string line;
  while (std::getline(std::cin, line)) {
    protocol::Request req;
    try {
      req = protocol::parse_request(line);
    } catch (const std::exception& e) {
      std::cout << protocol::encode_error(std::nullopt, e.what()) << std::endl;
      continue;
    }
    if (req.op == "hello") {
      if (mode == "no_dim") {
        std::cout << R"({"version":"1","name":"fake"})" << std::endl;
      } else {
        std::cout << protocol::encode_handshake({"fake", mode == "v2" ? "2" : "1", dim, batch}) << std::endl;
      }
      continue;
    }
    ++served;
    if (mode == "hang") std::this_thread::sleep_for(std::chrono::hours(1));
    if (mode == "crash" && served == 3) std::_Exit(3);
    if (mode == "malformed" && served == 2) {
      std::cout << "{\"id\":" << *req.id << ",\"output\":[" << std::endl;
      continue;
    }
    if (mode == "error" && served == 2) {
      std::cout << protocol::encode_error(req.id, "CUDA out of memory") << std::endl;
      continue;
    }
    if (mode == "wrong_id" && served == 2) {
      std::cout << protocol::encode_output(*req.id + 100, {1.0}) << std::endl;
      continue;
    }
    try {
      auto out = model.predict(req.inputs);
      if (mode == "nondet") out[0] += 1e-3 * static_cast<double>(served);
      if (mode == "drift" && served == 2) out.push_back(0.0);
      if (mode == "nan" && served == 2) {
        std::cout << "{\"id\":" << *req.id << ",\"output\":[NaN]}" << std::endl;
        continue;
      }
      std::cout << protocol::encode_output(req.id, out) << std::endl;
    } catch (const std::exception& e) {
      std::cout << protocol::encode_error(req.id, e.what()) << std::endl;
    }
  }
  return 0;
}
