#include "zonalopf/cli.hpp"

int main(int argc, char** argv) { return zonalopf::run_cli(argc, argv); }
