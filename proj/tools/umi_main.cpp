#include "umi/cli.hpp"

int main(int argc, char** argv) { return umi::cli::run(argc, argv); }
