#pragma once

#include <stdexcept>
#include <string>

namespace sfkit {

class SubprocessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommandResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string stderr_tail;  // last few KB of the child's stderr
};

/// Runs a shell command, supervises it with a timeout (SIGKILL to the process
/// group on expiry) and captures stderr. Never throws on non-zero exit; the
/// caller decides.
CommandResult run_command(const std::string& command, double timeout_sec);

/// Replaces every occurrence of `key` in `tmpl` with the single-quoted value
/// (quote-safe for /bin/sh).
void substitute_placeholder(std::string& tmpl, const std::string& key,
                            const std::string& value);

}  // namespace sfkit
