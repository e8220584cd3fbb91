#include "csta/cli.hpp"

int main(int argc, char** argv) { return csta::run_cli(argc, argv); }
