#include <string>
#include <vector>

#include "sitfaith/cli.hpp"

int main(int argc, char* argv[]) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return sitfaith::cli::dispatch(args);
}
