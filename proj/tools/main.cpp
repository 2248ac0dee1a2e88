#include <iostream>

#include "lpr/app.hpp"

int main(int argc, char** argv) { return lpr::run_app(argc, argv, std::cout, std::cerr); }
