#include <iostream>

#include "posevocab/cli.hpp"

int main(int argc, char** argv) { return posevocab::run_cli(argc, argv, std::cout, std::cerr); }
