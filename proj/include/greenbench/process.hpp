#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/syscall.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "greenbench/error.hpp"

namespace greenbench {

struct ExitStatus {
  bool signaled = false;
  int code = 0;  // exit code, or signal number when signaled

  bool success() const { return !signaled && code == 0; }
};

struct SpawnOptions {
  std::vector<std::string> argv;
  std::vector<std::string> env;  // "NAME=value" entries; nothing else is inherited
  std::filesystem::path working_dir;
  std::size_t capture_limit_bytes = 4096;
};

// Looks `name` up on `search_path` unless it already contains a slash.
inline std::optional<std::string> resolve_executable(const std::string& name,
                                                     const std::string& search_path) {
  if (name.empty()) return std::nullopt;
  if (name.find('/') != std::string::npos) {
    if (::access(name.c_str(), X_OK) == 0) return name;
    return std::nullopt;
  }
  std::size_t start = 0;
  while (start <= search_path.size()) {
    auto end = search_path.find(':', start);
    if (end == std::string::npos) end = search_path.size();
    std::string dir = search_path.substr(start, end - start);
    if (dir.empty()) dir = ".";
    std::string candidate = dir + "/" + name;
    if (::access(candidate.c_str(), X_OK) == 0 && !std::filesystem::is_directory(candidate))
      return candidate;
    start = end + 1;
  }
  return std::nullopt;
}

// A child process running in its own process group. The destructor kills the
// whole group and reaps the child, so nothing outlives the owning scope.
class Subprocess {
 public:
  explicit Subprocess(const SpawnOptions& opts) : capture_limit_(opts.capture_limit_bytes) {
    if (opts.argv.empty()) throw ConfigError("empty command");
    const char* host_path = std::getenv("PATH");
    std::string search = host_path ? host_path : "/usr/bin:/bin";
    for (const auto& kv : opts.env)
      if (kv.rfind("PATH=", 0) == 0) search = kv.substr(5);
    auto exe = resolve_executable(opts.argv[0], search);
    if (!exe) throw ConfigError("interpreter not found: " + opts.argv[0]);

    std::vector<char*> argv;
    for (const auto& a : opts.argv) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    std::vector<char*> envp;
    for (const auto& e : opts.env) envp.push_back(const_cast<char*>(e.c_str()));
    envp.push_back(nullptr);
    std::string cwd = opts.working_dir.empty() ? std::string() : opts.working_dir.string();

    int err_pipe[2];
    int exec_pipe[2];
    if (::pipe2(err_pipe, O_CLOEXEC) != 0) throw HarnessError("pipe: " + errno_text());
    if (::pipe2(exec_pipe, O_CLOEXEC) != 0) {
      ::close(err_pipe[0]);
      ::close(err_pipe[1]);
      throw HarnessError("pipe: " + errno_text());
    }

    pid_t pid = ::fork();
    if (pid < 0) {
      for (int fd : {err_pipe[0], err_pipe[1], exec_pipe[0], exec_pipe[1]}) ::close(fd);
      throw HarnessError("fork: " + errno_text());
    }
    if (pid == 0) {
      // Child: only async-signal-safe calls from here on.
      ::setpgid(0, 0);
      int devnull = ::open("/dev/null", O_RDWR);
      if (devnull >= 0) {
        ::dup2(devnull, 0);
        ::dup2(devnull, 1);
      }
      ::dup2(err_pipe[1], 2);
      if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) {
        int e = errno;
        (void)!::write(exec_pipe[1], &e, sizeof e);
        ::_exit(127);
      }
      ::execve(exe->c_str(), argv.data(), envp.data());
      int e = errno;
      (void)!::write(exec_pipe[1], &e, sizeof e);
      ::_exit(127);
    }

    pid_ = pid;
    ::setpgid(pid, pid);
    ::close(err_pipe[1]);
    ::close(exec_pipe[1]);
    stderr_fd_ = err_pipe[0];
    ::fcntl(stderr_fd_, F_SETFL, ::fcntl(stderr_fd_, F_GETFL) | O_NONBLOCK);

    int child_errno = 0;
    auto n = ::read(exec_pipe[0], &child_errno, sizeof child_errno);
    ::close(exec_pipe[0]);
    if (n == static_cast<ssize_t>(sizeof child_errno)) {
      reap_blocking();
      close_fds();
      throw ConfigError("cannot start " + opts.argv[0] + ": " + std::strerror(child_errno));
    }

    pidfd_ = static_cast<int>(::syscall(SYS_pidfd_open, pid_, 0));
  }

  Subprocess(const Subprocess&) = delete;
  Subprocess& operator=(const Subprocess&) = delete;

  ~Subprocess() {
    if (pid_ > 0) {
      ::kill(-pid_, SIGKILL);
      if (!status_) reap_blocking();
    }
    close_fds();
  }

  pid_t pid() const { return pid_; }
  bool exited() const { return status_.has_value(); }
  const std::optional<ExitStatus>& status() const { return status_; }
  const std::string& stderr_text() const { return stderr_; }

  // Drains stderr until the child exits or `deadline` passes. Returns true
  // once the child has exited; the rest of its process group is then killed.
  bool wait_until(std::chrono::steady_clock::time_point deadline) {
    using namespace std::chrono;
    while (!status_) {
      if (try_reap()) break;
      auto now = steady_clock::now();
      if (now >= deadline) return false;
      auto remaining = deadline - now;
      if (pidfd_ < 0) remaining = std::min<steady_clock::duration>(remaining, milliseconds(2));
      timespec ts{};
      auto ns = duration_cast<nanoseconds>(remaining).count();
      ts.tv_sec = static_cast<time_t>(ns / 1000000000);
      ts.tv_nsec = static_cast<long>(ns % 1000000000);

      pollfd fds[2];
      nfds_t nfds = 0;
      if (pidfd_ >= 0) fds[nfds++] = {pidfd_, POLLIN, 0};
      if (stderr_fd_ >= 0) fds[nfds++] = {stderr_fd_, POLLIN, 0};
      int rc = ::ppoll(fds, nfds, &ts, nullptr);
      if (rc < 0 && errno != EINTR) throw HarnessError("ppoll: " + errno_text());
      drain_stderr();
    }
    ::kill(-pid_, SIGKILL);
    drain_stderr();
    return true;
  }

  // Kills the whole group and reaps the child.
  void kill_group() {
    if (pid_ <= 0) return;
    ::kill(-pid_, SIGKILL);
    if (!status_) reap_blocking();
    drain_stderr();
  }

 private:
  static std::string errno_text() { return std::strerror(errno); }

  bool try_reap() {
    int st = 0;
    pid_t r = ::waitpid(pid_, &st, WNOHANG);
    if (r == pid_) {
      record(st);
      return true;
    }
    return false;
  }

  void reap_blocking() {
    int st = 0;
    while (::waitpid(pid_, &st, 0) < 0 && errno == EINTR) {
    }
    record(st);
  }

  void record(int st) {
    if (WIFSIGNALED(st))
      status_ = ExitStatus{true, WTERMSIG(st)};
    else
      status_ = ExitStatus{false, WEXITSTATUS(st)};
  }

  void drain_stderr() {
    if (stderr_fd_ < 0) return;
    char buf[4096];
    for (;;) {
      auto n = ::read(stderr_fd_, buf, sizeof buf);
      if (n > 0) {
        append_tail(buf, static_cast<std::size_t>(n));
        continue;
      }
      if (n == 0) {
        ::close(stderr_fd_);
        stderr_fd_ = -1;
      } else if (errno == EINTR) {
        continue;
      }
      return;
    }
  }

  // Keeps only the last capture_limit_ bytes; the failure message of most
  // runtimes is at the end of their output.
  void append_tail(const char* data, std::size_t n) {
    stderr_.append(data, n);
    if (stderr_.size() > capture_limit_) stderr_.erase(0, stderr_.size() - capture_limit_);
  }

  void close_fds() {
    if (stderr_fd_ >= 0) ::close(stderr_fd_);
    if (pidfd_ >= 0) ::close(pidfd_);
    stderr_fd_ = pidfd_ = -1;
  }

  std::size_t capture_limit_;
  pid_t pid_ = -1;
  int stderr_fd_ = -1;
  int pidfd_ = -1;
  std::optional<ExitStatus> status_;
  std::string stderr_;
};

namespace detail {

inline std::vector<pid_t> children_of(pid_t pid) {
  std::vector<pid_t> out;
  std::error_code ec;
  std::filesystem::directory_iterator tasks("/proc/" + std::to_string(pid) + "/task", ec);
  if (ec) return out;
  for (const auto& task : tasks) {
    std::ifstream in(task.path() / "children");
    pid_t child;
    while (in >> child) out.push_back(child);
  }
  return out;
}

inline std::unordered_map<pid_t, std::vector<pid_t>> scan_parent_map() {
  std::unordered_map<pid_t, std::vector<pid_t>> map;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator("/proc", ec)) {
    const auto name = entry.path().filename().string();
    if (name.empty() || name.find_first_not_of("0123456789") != std::string::npos) continue;
    std::ifstream in(entry.path() / "stat");
    std::string line;
    if (!std::getline(in, line)) continue;
    auto close = line.rfind(')');
    if (close == std::string::npos) continue;
    char state;
    pid_t ppid;
    std::istringstream rest(line.substr(close + 1));
    if (rest >> state >> ppid) map[ppid].push_back(static_cast<pid_t>(std::stoi(name)));
  }
  return map;
}

inline std::size_t resident_bytes(pid_t pid) {
  std::ifstream in("/proc/" + std::to_string(pid) + "/statm");
  std::size_t size = 0, resident = 0;
  if (!(in >> size >> resident)) return 0;
  return resident * static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));
}

inline bool has_children_file(pid_t pid) {
  return std::filesystem::exists("/proc/" + std::to_string(pid) + "/task/" +
                                 std::to_string(pid) + "/children");
}

}  // namespace detail

// Resident set size summed over `root` and all of its descendants.
inline std::size_t process_tree_rss_bytes(pid_t root) {
  std::vector<pid_t> todo{root};
  std::size_t total = 0;
  if (detail::has_children_file(root)) {
    while (!todo.empty()) {
      pid_t p = todo.back();
      todo.pop_back();
      total += detail::resident_bytes(p);
      for (pid_t c : detail::children_of(p)) todo.push_back(c);
    }
    return total;
  }
  auto parents = detail::scan_parent_map();
  while (!todo.empty()) {
    pid_t p = todo.back();
    todo.pop_back();
    total += detail::resident_bytes(p);
    if (auto it = parents.find(p); it != parents.end())
      todo.insert(todo.end(), it->second.begin(), it->second.end());
  }
  return total;
}

}  // namespace greenbench
