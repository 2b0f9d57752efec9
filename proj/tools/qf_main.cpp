#include "qf/harness.hpp"

int main(int argc, char** argv) { return qf::cli_main(argc, argv); }
