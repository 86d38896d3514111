#include "bayesoc/cli_io.hpp"

int main(int argc, char** argv) { return bayesoc::cli_main(argc, argv); }
