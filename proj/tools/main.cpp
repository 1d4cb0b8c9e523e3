#include "posemb/cli.hpp"

int main(int argc, char** argv) { return posemb::run_cli(argc, argv); }
