#include "egsa/cli.hpp"

int main(int argc, char** argv) { return egsa::run_cli(argc, argv); }
