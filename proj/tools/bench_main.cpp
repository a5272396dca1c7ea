#include "xmrbench/cli.hpp"

int main(int argc, char** argv) { return xmr::cli::main_entry(argc, argv); }
