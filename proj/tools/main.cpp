#include "noiserank/cli.hpp"

int main(int argc, char** argv) { return noiserank::run_cli(argc, argv); }
