#include <iostream>

#include "i2v/cli.hpp"

int main(int argc, char** argv) {
  return i2v::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
