// SPDX-License-Identifier: Apache-2.0
#include "dlvm/cli.hpp"

int main(int argc, char** argv) { return dlvm::cli_main(argc, argv); }
