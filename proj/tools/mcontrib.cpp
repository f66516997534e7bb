#include "mcontrib/cli.hpp"

int main(int argc, char** argv) { return mcontrib::cli::run(argc, argv); }
