#include <string>
#include <vector>

#include "mpdetect/cli.hpp"

int main(int argc, char** argv)
{
  std::vector<std::string> args(argv + 1, argv + argc);
  return mpdetect::cli::run(args);
}
