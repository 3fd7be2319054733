#include <nsp/driver.hpp>

#include <iostream>

int main(int argc, char** argv) {
    return nsp::run_tool(argc, argv, std::cout, std::cerr);
}
