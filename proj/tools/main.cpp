#include <vector>

#include "sdpt/cli.hpp"

int main(int argc, char** argv) {
  return sdpt::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
