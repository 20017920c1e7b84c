#include <iostream>
#include <string>
#include <vector>

#include "prod/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args;
  args.reserve(argc > 1 ? static_cast<std::size_t>(argc - 1) : 0);
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return prod::dispatch(args, std::cout, std::cerr);
}
