#include <iostream>

#include "atgraph/cli.hpp"

int main(int argc, char** argv) {
  return atgraph::cli::run(argc, argv, std::cout, std::cerr);
}
