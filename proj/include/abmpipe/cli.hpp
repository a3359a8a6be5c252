#pragma once

// `abm_pipeline` command-line front end.
//
// Subcommands: gen-synth, extract, train, evaluate, compare-categories,
// simulate-rsvp. Exit codes: 0 success, 1 usage error, 2 data or validation
// error, 3 numerical failure. Commands that write a directory stage it next to
// the target as `<out>.partial` and rename it into place only on success, so a
// failed run leaves an existing output directory untouched.

#include <iosfwd>
#include <string>
#include <vector>

namespace abmpipe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

/// Environment variable supplying the default for every `--seed` flag.
inline constexpr const char* kSeedEnv = "ABM_PIPELINE_SEED";

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace abmpipe::cli
