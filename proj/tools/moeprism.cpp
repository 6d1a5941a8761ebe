#include <string>
#include <vector>

#include "moeprism/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return moeprism::cli::run_cli(std::move(args));
}
