// SPDX-License-Identifier: Apache-2.0
#include "plora_cli/cli.hpp"

int main(int argc, char** argv) { return plora::cli::run(argc, argv); }
