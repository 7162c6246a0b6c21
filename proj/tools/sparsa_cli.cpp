#include "sparsa/cli.hpp"

int main(int argc, char** argv) { return sparsa::cli::run(std::vector<std::string>(argv + 1, argv + argc)); }
