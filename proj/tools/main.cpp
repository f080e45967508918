#include <iostream>

#include "fusenet/cli.hpp"

int main(int argc, char** argv) {
  return fusenet::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
