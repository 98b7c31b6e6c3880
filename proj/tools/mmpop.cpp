#include "mmpop/cli.hpp"

int main(int argc, char** argv) { return mmpop::cli::run(argc, argv); }
