#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pereq::cli {

/// Process exit codes; each error path has its own.
enum Exit : int {
  kOk = 0,
  kNotAchieved = 1,     // no start converged, a check failed, candidate not certified
  kUsage = 2,           // bad flags or malformed configuration
  kCertification = 3,   // market fails the no-arbitrage certificate
  kPreferences = 4,     // preference parameters rejected by validation
  kNumerical = 5,       // solver or envelope failure
  kIo = 6,              // unreadable input or unwritable output
};

/// Runs one command; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pereq::cli
