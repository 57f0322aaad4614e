#include "dxp/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return dxp::cli::run(argc, argv, std::cout, std::cerr); }
