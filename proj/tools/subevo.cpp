#include "subevo/cli.hpp"

int main(int argc, char** argv) { return subevo::run_cli(argc, argv); }
