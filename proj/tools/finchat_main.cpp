#include <iostream>
#include <vector>

#include "finchat/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return finchat::dispatch(args, std::cin, std::cout, std::cerr);
}
