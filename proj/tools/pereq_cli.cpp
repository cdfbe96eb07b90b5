#include <iostream>
#include <string>
#include <vector>

#include "pereq/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pereq::cli::run(args, std::cout, std::cerr);
}
