#include <iostream>

#include "embproc/cli.hpp"

int main(int argc, char** argv) { return embproc::cli::run(argc, argv, std::cout, std::cerr); }
