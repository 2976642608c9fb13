#pragma once

// Command-line front end. Verbs: generate, train, predict, eval, plot.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <iosfwd>
#include <string>
#include <vector>

namespace apseg::cli {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace apseg::cli
