#include "commands.hpp"

int main(int argc, char** argv) { return rcpm::cli::run(argc, argv); }
