#include <iostream>
#include <string>
#include <vector>

#include "vistrack/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return vistrack::run_cli(args, std::cout, std::cerr);
}
