#include "vsap/cli.hpp"

int main(int argc, char** argv) { return vsap::cli::run(argc, argv); }
