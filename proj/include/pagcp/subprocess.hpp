#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <sys/types.h>
#include <vector>

namespace pagcp {

/// Child process with line-oriented pipes on stdin/stdout. stderr is
/// inherited.
class Subprocess {
 public:
  explicit Subprocess(const std::vector<std::string>& argv);
  ~Subprocess();
  Subprocess(const Subprocess&) = delete;
  Subprocess& operator=(const Subprocess&) = delete;

  /// Throws ErrorKind::evaluator_failure if the child has closed its stdin.
  void write_line(const std::string& line);

  /// Next line without the newline; nullopt on EOF. Throws ErrorKind::timeout.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout);

  /// Closes stdin and waits up to `grace` before killing. Returns the exit
  /// status as from waitpid, or -1 if it had to be killed.
  int finish(std::chrono::milliseconds grace = std::chrono::milliseconds(2000));

  bool running();
  pid_t pid() const noexcept { return pid_; }

 private:
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  bool reaped_ = false;
  int status_ = 0;
};

}  // namespace pagcp
