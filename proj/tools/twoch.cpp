#include <iostream>

#include "twoch/commands.hpp"

int main(int argc, char** argv) { return twoch::cli::run_cli(argc, argv, std::cout, std::cerr); }
