#include "boxquery/cli.hpp"

int main(int argc, char** argv) { return boxquery::run_cli(argc, argv); }
