#include "cli.hpp"

int main(int argc, char** argv) { return ocdn::cli::run_cli(argc, argv); }
