#include "crk/cli.hpp"

int main(int argc, char** argv) { return crk::cli::run_cli(argc, argv); }
