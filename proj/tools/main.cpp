#include "cli.hpp"

int main(int argc, char** argv) { return sqp::cli::run(argc, argv); }
