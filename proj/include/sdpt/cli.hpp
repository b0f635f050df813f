#ifndef SDPT_CLI_HPP
#define SDPT_CLI_HPP

#include <iostream>
#include <string>
#include <vector>

namespace sdpt::cli {

// Runs one toolkit command (render / train / infer / eval / plan / xtslice).
// Exit codes: 0 success, 1 usage error, 2 bad data/config/format, 3 numeric
// failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline int run(const std::vector<std::string>& args) {
  return run(args, std::cout, std::cerr);
}

}  // namespace sdpt::cli

#endif
