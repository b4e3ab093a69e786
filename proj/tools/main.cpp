#include "faxis/cli.hpp"

int main(int argc, char** argv) { return faxis::cli::run(argc, argv); }
