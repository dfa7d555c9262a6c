#pragma once

#include <string>
#include <vector>

namespace fdvv {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitUsage = 64;

// Subcommands: ingest, fit, compensate, simulate, optimize, export-wave, serve.
// args excludes the program name.
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace fdvv
