#include "kptrack/cli.hpp"

int main(int argc, char** argv) { return kptrack::cli::run(argc, argv); }
