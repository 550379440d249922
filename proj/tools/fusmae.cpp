#include "fusmae/cli.hpp"

int main(int argc, char** argv) { return fusmae::cli::dispatch(argc, argv); }
