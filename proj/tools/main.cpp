#include "ebench/cli.hpp"

int main(int argc, char** argv) {
  return ebench::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
