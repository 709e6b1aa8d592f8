#include "spst/cli.hpp"

int main(int argc, char** argv) { return spst::cli::run(argc, argv); }
