#include "factharness/cli.hpp"

int main(int argc, char** argv) { return factharness::cli::run_cli(argc, argv); }
