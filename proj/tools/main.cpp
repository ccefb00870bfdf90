#include "pearnet/cli.hpp"

int main(int argc, char** argv) { return pearnet::cli::run(argc, argv); }
