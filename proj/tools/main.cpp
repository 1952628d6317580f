#include "micronas/cli/cli.hpp"

int main(int argc, char** argv) { return micronas::cli::run(argc, argv); }
