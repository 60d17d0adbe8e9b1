#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ccnn::cli {

/// Runs one `ccnn` subcommand. argv[0] is the program name.
/// Returns 0 on success, 1 on operational failure, 2 on usage errors.
int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace ccnn::cli
