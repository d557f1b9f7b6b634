#include "rimr/cli.hpp"

int main(int argc, char** argv) { return rimr::cli::run(argc, argv); }
