#include "cge/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return cge::run_cli(argc, argv, std::cout, std::cerr); }
