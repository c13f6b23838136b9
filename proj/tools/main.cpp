#include <iostream>
#include <string>
#include <vector>

#include "dconn/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dconn::run_cli(args, std::cout, std::cerr);
}
