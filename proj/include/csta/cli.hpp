#pragma once

// Batch command-line front end: gen | train | eval | summarize | macs.
// Verbosity comes from the CSTA_LOG environment variable
// (quiet | info | debug, default info).

namespace csta {

int run_cli(int argc, const char* const* argv);

}  // namespace csta
