// SPDX-License-Identifier: Apache-2.0
#include "tensorize/cli.hpp"

int main(int argc, char** argv) {
    return tensorize::cli::run(argc, argv);
}
