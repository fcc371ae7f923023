// Self-contained oracle suite behind the `selftest` CLI command: every
// derived value is recomputed with naive reference code and compared
// against the library path. Output is deterministic.
#pragma once

#include <ostream>

namespace patchmix {

// Runs all checks, prints one line per check plus a summary. Returns true
// when everything passed.
bool run_selftest(std::ostream& out);

}  // namespace patchmix
