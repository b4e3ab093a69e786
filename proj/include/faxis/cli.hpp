#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "faxis/core.hpp"

namespace faxis::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Bad invocation detected after argument parsing (exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// "semantic=1,speaker_id=-1.0" -> weights. Throws UsageError on bad syntax or
// a repeated axis.
QueryWeights parse_weight_spec(std::string_view spec);

// FNV-1a 64 as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace faxis::cli
