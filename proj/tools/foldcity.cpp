#include "foldcity/cli/cli.hpp"

int main(int argc, char** argv) { return foldcity::cli::run(argc, argv); }
