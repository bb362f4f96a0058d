#include <iostream>

#include "neuralfd/cli.hpp"

int main(int argc, char** argv) { return neuralfd::cli::run(argc, argv, std::cout, std::cerr); }
