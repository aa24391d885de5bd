#include "sfkit/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

namespace sfkit {

void substitute_placeholder(std::string& tmpl, const std::string& key,
                            const std::string& value) {
  // Single-quote for the shell; embedded quotes become '\'' .
  std::string quoted = "'";
  for (char c : value) {
    if (c == '\'')
      quoted += "'\\''";
    else
      quoted += c;
  }
  quoted += "'";

  std::size_t pos = 0;
  while ((pos = tmpl.find(key, pos)) != std::string::npos) {
    tmpl.replace(pos, key.size(), quoted);
    pos += quoted.size();
  }
}

CommandResult run_command(const std::string& command, double timeout_sec) {
  int err_pipe[2];
  if (pipe(err_pipe) != 0) throw SubprocessError("pipe() failed");

  const pid_t pid = fork();
  if (pid < 0) {
    close(err_pipe[0]);
    close(err_pipe[1]);
    throw SubprocessError("fork() failed");
  }
  if (pid == 0) {
    // Child: own process group so a timeout can kill the whole tree.
    setpgid(0, 0);
    close(err_pipe[0]);
    dup2(err_pipe[1], STDERR_FILENO);
    close(err_pipe[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }

  close(err_pipe[1]);
  fcntl(err_pipe[0], F_SETFL, O_NONBLOCK);

  CommandResult result;
  constexpr std::size_t kMaxStderr = 8192;
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration<double>(timeout_sec);
  bool child_done = false;
  int status = 0;

  auto drain = [&]() {
    char buf[1024];
    ssize_t n;
    while ((n = read(err_pipe[0], buf, sizeof buf)) > 0) {
      result.stderr_tail.append(buf, static_cast<std::size_t>(n));
      if (result.stderr_tail.size() > kMaxStderr)
        result.stderr_tail.erase(0, result.stderr_tail.size() - kMaxStderr);
    }
  };

  while (!child_done) {
    struct pollfd pfd{err_pipe[0], POLLIN, 0};
    poll(&pfd, 1, 50);
    drain();

    const pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) {
      child_done = true;
      break;
    }
    if (r < 0 && errno != EINTR) {
      child_done = true;
      break;
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      result.timed_out = true;
      drain();
      close(err_pipe[0]);
      return result;
    }
  }
  drain();
  close(err_pipe[0]);

  if (WIFEXITED(status))
    result.exit_code = WEXITSTATUS(status);
  else if (WIFSIGNALED(status))
    result.exit_code = 128 + WTERMSIG(status);
  return result;
}

}  // namespace sfkit
