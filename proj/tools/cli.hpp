#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace unoranic::cli {

/// Process exit codes, one per error class.
enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kConfig = 3,
    kFormat = 4,
    kIo = 5,
    kDimension = 6,
    kState = 7,
    kNumeric = 8,
    kUndefinedMetric = 9,
};

inline constexpr const char* kToolVersion = "1.0.0";

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace unoranic::cli
