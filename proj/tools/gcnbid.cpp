#include <iostream>
#include <string>
#include <vector>

#include "gcnbid/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return gcnbid::cli::run(args, std::cout, std::cerr);
}
