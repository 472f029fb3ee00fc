// Stand-in trainer for the external objective protocol tests.
//
//   fake_objective sum       loss = sum of the factor values
//   fake_objective run-id    loss = run_id
//   fake_objective fail      diagnostics on stderr, exit 3
//   fake_objective garbage   reply is not JSON
//   fake_objective no-loss   reply lacks "loss"
//   fake_objective sleep     never answers
//   fake_objective deaf      answers without reading stdin

#include <chrono>
#include <iostream>
#include <string>
#include <thread>

#include <json.hpp>

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "sum";
  if (mode == "deaf") {
    std::cout << "{\"loss\": 1.5}\n";
    return 0;
  }
  std::string line;
  std::getline(std::cin, line);
  if (mode == "sleep") {
    std::this_thread::sleep_for(std::chrono::seconds(60));
    return 0;
  }
  if (mode == "fail") {
    std::cerr << "trainer crashed: out of memory\n";
    return 3;
  }
  if (mode == "garbage") {
    std::cout << "loss is low\n";
    return 0;
  }
  if (mode == "no-loss") {
    std::cout << "{\"value\": 2}\n";
    return 0;
  }
  const auto request = nlohmann::json::parse(line);
  double loss = 0.0;
  if (mode == "run-id") {
    loss = request.at("run_id").get<double>();
  } else {
    for (const auto& [key, value] : request.items())
      if (key != "run_id") loss += value.get<double>();
  }
  std::cout << nlohmann::json{{"loss", loss}}.dump() << "\n";
  return 0;
}
