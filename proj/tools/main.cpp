#include <iostream>

#include "cli/cli.hpp"
#include "cli/config.hpp"

int main(int argc, char** argv) {
  return modgate::cli::run(argc, argv, std::cout, std::cerr, modgate::cli::process_environment());
}
