#include "varjepa/cli.hpp"

int main(int argc, char** argv) { return varjepa::run_cli(argc, argv); }
