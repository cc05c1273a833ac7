#include <iostream>

#include "tagsynth/cli.hpp"

int main(int argc, char** argv) { return tagsynth::run_cli(argc, argv, std::cout, std::cerr); }
