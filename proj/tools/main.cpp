#include "commands.hpp"

int main(int argc, char** argv) { return tribert::cli::run_cli(argc, argv); }
