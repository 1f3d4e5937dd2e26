#include "attribkit/cli.hpp"

int main(int argc, char** argv) { return attribkit::cli::run(argc, argv); }
