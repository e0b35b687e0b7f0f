#include "certiguard/cli.hpp"

int main(int argc, char** argv) { return certiguard::cli::main(argc, argv); }
