#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include "rsmtune/cli.hpp"

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  const std::vector<std::string> args(argv + 1, argv + argc);
  const auto outcome = rsmtune::dispatch(args);
  std::cout << outcome.out << std::flush;
  std::cerr << outcome.err << std::flush;
  return outcome.exit_code;
}
