#include <sgnalign/cli.hpp>

int main(int argc, char** argv) { return sgnalign::cli::run(argc, argv); }
