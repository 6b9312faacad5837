#include "mmt/cli/app.hpp"

int main(int argc, char** argv) { return mmt::cli::run(argc, argv, std::cin, std::cout, std::cerr); }
