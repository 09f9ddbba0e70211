#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace flowface::cli {

inline constexpr int kOk = 0;
inline constexpr int kValidation = 1;
inline constexpr int kAbort = 2;
inline constexpr int kUsage = 64;

std::string usage();

/// `args` excludes the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace flowface::cli
