#include <iostream>
#include <string>
#include <vector>

#include "invarirank/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return invarirank::RunCli(args, std::cout, std::cerr);
}
