#include <iostream>

#include "helmsman/cli.hpp"

int main(int argc, char** argv) { return helmsman::cli::run_cli(argc, argv, std::cin, std::cout, std::cerr); }
