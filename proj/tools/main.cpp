#include <string>
#include <vector>

#include "tml/cli.hpp"

int main(int argc, char** argv) {
  return tml::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
