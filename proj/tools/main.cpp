#include <rsdpe/cli.hpp>

int main(int argc, char** argv) { return rsdpe::run_cli(argc, argv); }
