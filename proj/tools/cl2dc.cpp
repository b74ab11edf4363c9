#include <string>
#include <vector>

#include "cl2dc/cli.hpp"

int main(int argc, char** argv) {
  return cl2dc::run_cli(std::vector<std::string>(argv, argv + argc));
}
