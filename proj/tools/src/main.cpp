#include <iostream>
#include <string>
#include <vector>

#include "protoforge_tools/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return protoforge::tools::run(args, std::cout, std::cerr);
}
