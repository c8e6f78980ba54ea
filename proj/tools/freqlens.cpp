#include "freqlens/cli.hpp"

int main(int argc, char** argv) { return freqlens::run_cli(argc, argv); }
