#include "m3s/cli.hpp"

int main(int argc, char** argv) { return m3s::cli::main(argc, argv); }
