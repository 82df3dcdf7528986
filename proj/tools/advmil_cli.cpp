#include "advmil/cli.hpp"
#include "advmil/runtime.hpp"

int main(int argc, char** argv) {
  advmil::tune_allocator();
  return advmil::cli::run(argc, argv);
}
