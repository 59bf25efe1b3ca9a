#include <iostream>

#include "kspd/cli.hpp"

int main(int argc, char** argv) { return kspd::cli_dispatch(argc, argv, std::cout, std::cerr); }
