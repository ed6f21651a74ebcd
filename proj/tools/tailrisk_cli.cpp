#include <iostream>

#include "tailrisk/cli.h"

int main(int argc, char** argv) { return tailrisk::run_cli(argc, argv, std::cout, std::cerr); }
