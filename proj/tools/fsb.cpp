#include <string>
#include <vector>

#include "fsb/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fsb::cli::run(std::move(args));
}
