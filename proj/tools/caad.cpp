#include <iostream>

#include "caad/cli.hpp"

int main(int argc, char** argv) {
  return caad::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
