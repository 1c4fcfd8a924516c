#include <iostream>

#include "seffsal/cli.hpp"
#include "seffsal/trainer.hpp"

int main(int argc, char** argv) {
  seffsal::retain_freed_memory();
  return seffsal::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
