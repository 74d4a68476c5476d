#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sdkd {

// args excludes the program name. Returns 0 on success, 2 on usage or config
// errors, 1 on runtime errors.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sdkd
