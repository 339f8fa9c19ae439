#include <iostream>

#include "evgraph/cli.hpp"

int main(int argc, char** argv) { return evg::cli::run(argc, argv, std::cout, std::cerr); }
