#include <iostream>

#include "pui/cli.hpp"

int main(int argc, char** argv) { return pui::run_cli(argc, argv, std::cout, std::cerr); }
