#include "patchbank/cli.hpp"

int main(int argc, char** argv) { return patchbank::run(argc, argv); }
