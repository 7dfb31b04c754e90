#include "bimac/cli.hpp"

int main(int argc, char** argv) { return bimac::run_cli(argc, argv); }
