#include <iostream>
#include <string>
#include <vector>

#include "msfr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return msfr::run_cli(args, std::cout, std::cerr);
}
