#include <iostream>
#include <string>
#include <vector>

#include "tatr/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return tatr::run_cli(args, std::cout, std::cerr);
}
