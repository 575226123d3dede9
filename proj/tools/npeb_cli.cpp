#include "npeb/cli.hpp"

int main(int argc, char** argv) { return npeb::cli_main(argc, argv); }
