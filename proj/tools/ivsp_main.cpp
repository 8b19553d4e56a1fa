#include <string>
#include <vector>

#include "ivsp/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ivsp::run_cli(std::move(args));
}
