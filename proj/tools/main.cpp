#include <iostream>

#include "physattn/cli.hpp"
#include "physattn/runtime.hpp"

int main(int argc, char** argv) {
  physattn::tune_allocator();
  return physattn::run_cli(argc, argv, std::cout, std::cerr);
}
