#include <iostream>

#include "rwre/app.hpp"

int main(int argc, char** argv) { return rwre::app::main_entry(argc, argv, std::cout, std::cerr); }
