#include <string>
#include <vector>

#include "memeclf/cli.hpp"

int main(int argc, char** argv) {
  return memeclf::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
