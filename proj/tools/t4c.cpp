#include <iostream>

#include "t4c/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return t4c::run_cli(args, std::cout, std::cerr);
}
