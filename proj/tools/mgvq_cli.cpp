#include <iostream>

#include "mgvq/cli.hpp"

int main(int argc, char** argv) {
  return mgvq::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
