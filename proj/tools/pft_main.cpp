#include <iostream>
#include <string>
#include <vector>

#include "pft/experiment.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pft::cli_dispatch(args, std::cout, std::cerr);
}
