#include <iostream>

#include "tilemark/cli.hpp"

int main(int argc, char** argv) {
  return tilemark::cli::run(argc, argv, std::cout, std::cerr);
}
