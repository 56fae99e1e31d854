#include "nlselab/cli.hpp"

int main(int argc, char** argv) { return nlselab::cli_main(argc, argv); }
