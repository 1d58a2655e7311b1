#include <iostream>

#include "dor/cli.hpp"

int main(int argc, char** argv) { return dor::cli::run(argc, argv, std::cout, std::cerr); }
