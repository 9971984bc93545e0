#include "firegan/cli.hpp"

int main(int argc, char** argv) { return firegan::cli::run_cli(argc, argv); }
