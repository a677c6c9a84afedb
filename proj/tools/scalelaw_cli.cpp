#include "scalelaw/cli.hpp"

int main(int argc, char** argv) { return scalelaw::cli::run(argc, argv); }
