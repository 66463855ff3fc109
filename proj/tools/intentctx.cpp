#include <string>
#include <vector>

#include "intentctx/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return intentctx::run_command(args);
}
