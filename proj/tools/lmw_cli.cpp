#include <iostream>

#include "lmw/cli.hpp"

int main(int argc, char** argv) { return lmw::cli::run(argc, argv, std::cout, std::cerr); }
