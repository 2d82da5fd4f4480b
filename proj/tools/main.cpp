#include <iostream>
#include <string>
#include <vector>

#include "exnex/cli.hpp"

int main(int argc, char** argv)
{
    return exnex::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
