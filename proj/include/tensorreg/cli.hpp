#pragma once

#include <iosfwd>

namespace tensorreg {

/// Runs one command line. Returns 0 on success, 1 on usage errors and 2 on
/// data or numerical errors; diagnostics go to `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tensorreg
