#include "w2t/cli.hpp"

int main(int argc, char** argv) { return w2t::cli_main(argc, argv); }
