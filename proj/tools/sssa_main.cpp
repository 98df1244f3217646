#include <vector>
#include <string>

#include "sssa/cli.hpp"

int main(int argc, char** argv) {
  return sssa::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
