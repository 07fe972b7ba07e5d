#include <iostream>

#include "tensorreg/cli.hpp"

int main(int argc, char** argv) { return tensorreg::dispatch(argc, argv, std::cout, std::cerr); }
