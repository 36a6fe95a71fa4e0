#include "cli.hpp"

int main(int argc, char** argv) { return gml::cli::run(argc, argv); }
