#include <iostream>
#include <string>
#include <vector>

#include "peftbench/cli.hpp"

int main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return peftbench::dispatch(args, std::cout, std::cerr);
}
