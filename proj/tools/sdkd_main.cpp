#include <iostream>
#include <string>
#include <vector>

#include "sdkd/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sdkd::cli_main(args, std::cout, std::cerr);
}
