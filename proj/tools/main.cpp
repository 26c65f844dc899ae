#include "tracemia/cli.hpp"

int main(int argc, char** argv) { return tracemia::run_cli(argc, argv); }
