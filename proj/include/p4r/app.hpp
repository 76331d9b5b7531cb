#pragma once

// The `p4r` command line: prepare, train, eval, rouge, recommend.

#include <iosfwd>
#include <string>
#include <vector>

namespace p4r::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsageOrValidation = 2;
inline constexpr int kNumericFailure = 3;
inline constexpr int kInternal = 1;

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace p4r::cli
