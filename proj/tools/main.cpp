#include "cli.hpp"

int main(int argc, char** argv) { return hdrx::cli::cli_dispatch(argc, argv); }
