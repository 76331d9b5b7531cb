#include <iostream>

#include "p4r/app.hpp"

int main(int argc, char** argv) { return p4r::cli::run(argc, argv, std::cout, std::cerr); }
