// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace plora::cli {

/// Runs one `plora` invocation. `args` excludes the program name.
/// Returns 0 on success and a non-zero code on bad flags or failed commands.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace plora::cli
