#ifndef PROD_CLI_HPP_
#define PROD_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

namespace prod {

// Runs one CLI command. Exit codes: 0 success, 1 usage error (help text on
// err), 2 data/config error (diagnostic on err). All randomness is
// controlled by the config seed or --seed.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace prod

#endif  // PROD_CLI_HPP_
