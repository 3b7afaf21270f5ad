#include "commands.hpp"

int main(int argc, char** argv) { return nkn::cli::run(argc, argv); }
