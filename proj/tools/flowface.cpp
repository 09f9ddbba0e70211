#include "flowface/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return flowface::cli::run({argv + 1, argv + argc}, std::cout, std::cerr); }
