#include <iostream>

#include "rapgen/cli.hpp"

int main(int argc, char** argv) { return rapgen::cli::run_cli(argc, argv, std::cout, std::cerr); }
