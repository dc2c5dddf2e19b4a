#include "ilad/harness.hpp"

int main(int argc, char** argv) { return ilad::cli_main(argc, argv); }
