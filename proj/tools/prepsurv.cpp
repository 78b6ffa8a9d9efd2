#include <iostream>

#include "prepsurv/cli.hpp"

int main(int argc, char** argv) {
  return prepsurv::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
