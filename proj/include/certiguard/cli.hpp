#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace certiguard::cli {

/// Runs one command line. `args` excludes the program name. Returns the
/// process exit status; failures are reported on `err` as one JSON line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace certiguard::cli
