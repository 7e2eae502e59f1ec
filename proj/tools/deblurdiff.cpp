#include "deblurdiff/cli.hpp"

int main(int argc, char** argv) { return deblurdiff::cli::run(argc, argv); }
