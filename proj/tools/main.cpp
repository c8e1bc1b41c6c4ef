#include "mrigen/cli.hpp"

int main(int argc, char** argv) { return mrigen::run_cli(argc, argv); }
