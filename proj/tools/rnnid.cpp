#include "rnnid/cli.hpp"

int main(int argc, char** argv) { return rnnid::run_cli(argc, argv); }
