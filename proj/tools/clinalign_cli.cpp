#include <iostream>

#include "clinalign/cli/app.hpp"

int main(int argc, char** argv) {
  return clinalign::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
