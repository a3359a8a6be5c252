#include "abmpipe/cli.hpp"

int main(int argc, char** argv) {
    return abmpipe::cli::run(argc, argv);
}
