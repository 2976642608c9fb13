#include "apseg/cli.hpp"

int main(int argc, char** argv) { return apseg::cli::main(argc, argv); }
