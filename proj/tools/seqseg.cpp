#include "seqseg/cli.hpp"

int main(int argc, char** argv) { return seqseg::run_cli(argc, argv); }
