#pragma once

// Runs a shell command confined to one working directory.
//
// Confinement uses Landlock: the child may read and execute under the system
// directories (the shell and its tools live there), read and write /dev/null,
// and do anything inside the working directory. Everything else on the
// filesystem is off limits, including the rest of /etc, /tmp and $HOME. If
// the kernel lacks Landlock, running fails with jail_unavailable instead of
// running unconfined.

#include <fcntl.h>
#include <linux/landlock.h>
#include <poll.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <map>
#include <utility>
#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "helmsman/error.hpp"

namespace helmsman::jail {

struct RunOptions {
  std::string command;  // passed to /bin/sh -c
  std::filesystem::path workdir;
  std::map<std::string, std::string> env;
  std::chrono::milliseconds timeout{30000};
  std::vector<std::filesystem::path> system_paths{"/usr", "/bin", "/sbin", "/lib", "/lib64"};
  std::size_t capture_limit = 1 << 20;
};

struct RunResult {
  int exit_code = 0;  // 128 + signal when killed
  bool timed_out = false;
  std::string stdout_text;
  std::string stderr_text;
};

namespace detail {

// Access bits by ABI version; spelled out so older headers still build.
inline constexpr std::uint64_t kFsAbi1 = (1ULL << 13) - 1;
inline constexpr std::uint64_t kFsRefer = 1ULL << 13;     // ABI 2
inline constexpr std::uint64_t kFsTruncate = 1ULL << 14;  // ABI 3
inline constexpr std::uint64_t kFsIoctlDev = 1ULL << 15;  // ABI 5

inline constexpr std::uint64_t kRead = LANDLOCK_ACCESS_FS_EXECUTE | LANDLOCK_ACCESS_FS_READ_FILE |
                                       LANDLOCK_ACCESS_FS_READ_DIR;

struct RulesetAttr {
  std::uint64_t handled_access_fs;
};

struct PathBeneath {
  std::uint64_t allowed_access;
  std::int32_t parent_fd;
} __attribute__((packed));

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(o.release()) {}
  Fd& operator=(Fd&& o) noexcept {
    reset(o.release());
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  int release() { return std::exchange(fd_, -1); }
  void reset(int fd = -1) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
  }

 private:
  int fd_ = -1;
};

inline Error sys_error(std::string_view code, const std::string& what) {
  return Error(code, what + ": " + std::strerror(errno), {{"errno", errno}});
}

}  // namespace detail

/// Highest Landlock ABI the kernel supports, or 0.
inline int landlock_abi() {
  long v = ::syscall(SYS_landlock_create_ruleset, nullptr, 0, LANDLOCK_CREATE_RULESET_VERSION);
  return v < 0 ? 0 : static_cast<int>(v);
}

/// Builds a ruleset confining a process to `workdir` plus read-only system
/// directories. The returned fd is applied in the child after fork.
inline detail::Fd build_ruleset(const RunOptions& opts) {
  using namespace detail;
  const int abi = landlock_abi();
  if (abi < 1) throw Error(errc::jail_unavailable, "the kernel does not support Landlock; refusing to run unconfined");
  std::uint64_t handled = kFsAbi1;
  if (abi >= 2) handled |= kFsRefer;
  if (abi >= 3) handled |= kFsTruncate;
  if (abi >= 5) handled |= kFsIoctlDev;

  RulesetAttr attr{handled};
  Fd ruleset(static_cast<int>(::syscall(SYS_landlock_create_ruleset, &attr, sizeof attr, 0)));
  if (ruleset.get() < 0) throw sys_error(errc::jail_unavailable, "landlock_create_ruleset");

  auto allow = [&](const std::filesystem::path& path, std::uint64_t access) {
    Fd target(::open(path.c_str(), O_PATH | O_CLOEXEC));
    if (target.get() < 0) return false;
    PathBeneath rule{access & handled, target.get()};
    if (::syscall(SYS_landlock_add_rule, ruleset.get(), LANDLOCK_RULE_PATH_BENEATH, &rule, 0) != 0)
      throw sys_error(errc::jail_unavailable, "landlock_add_rule " + path.string());
    return true;
  };
  for (const auto& p : opts.system_paths)
    if (std::filesystem::is_directory(p)) allow(p, kRead);
  allow("/dev/null", LANDLOCK_ACCESS_FS_READ_FILE | LANDLOCK_ACCESS_FS_WRITE_FILE | kFsTruncate | kFsIoctlDev);
  if (!allow(opts.workdir, handled))
    throw Error(errc::jail_unavailable, "cannot open jail directory " + opts.workdir.string());
  return ruleset;
}

inline RunResult run_jailed(const RunOptions& opts) {
  using namespace detail;
  auto ruleset = build_ruleset(opts);
  const auto workdir = std::filesystem::absolute(opts.workdir).string();

  std::vector<std::string> env_storage{"PATH=/usr/local/bin:/usr/bin:/bin", "HOME=" + workdir, "LANG=C.UTF-8"};
  for (const auto& [k, v] : opts.env) env_storage.push_back(k + "=" + v);
  std::vector<char*> envp;
  for (auto& e : env_storage) envp.push_back(e.data());
  envp.push_back(nullptr);
  std::string sh = "/bin/sh", dash_c = "-c", command = opts.command;
  char* argv[] = {sh.data(), dash_c.data(), command.data(), nullptr};

  int out_pipe[2], err_pipe[2];
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) throw sys_error(errc::subprocess_failed, "pipe");
  Fd out_r(out_pipe[0]), out_w(out_pipe[1]);
  if (::pipe2(err_pipe, O_CLOEXEC) != 0) throw sys_error(errc::subprocess_failed, "pipe");
  Fd err_r(err_pipe[0]), err_w(err_pipe[1]);
  Fd devnull(::open("/dev/null", O_RDONLY | O_CLOEXEC));

  const pid_t pid = ::fork();
  if (pid < 0) throw sys_error(errc::subprocess_failed, "fork");
  if (pid == 0) {
    // Child: only async-signal-safe calls from here on.
    ::setpgid(0, 0);
    ::dup2(devnull.get(), 0);
    ::dup2(out_w.get(), 1);
    ::dup2(err_w.get(), 2);
    auto die = [](const char* msg) {
      if (::write(2, msg, std::strlen(msg)) < 0) ::_exit(126);
      ::_exit(126);
    };
    if (::chdir(workdir.c_str()) != 0) die("jail: chdir failed\n");
    if (::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0) die("jail: no_new_privs failed\n");
    if (::syscall(SYS_landlock_restrict_self, ruleset.get(), 0) != 0) die("jail: landlock_restrict_self failed\n");
    ::execve(argv[0], argv, envp.data());
    die("jail: exec failed\n");
  }
  ::setpgid(pid, pid);
  out_w.reset();
  err_w.reset();
  ruleset.reset();

  RunResult result;
  const auto deadline = std::chrono::steady_clock::now() + opts.timeout;
  pollfd fds[2] = {{out_r.get(), POLLIN, 0}, {err_r.get(), POLLIN, 0}};
  std::string* sinks[2] = {&result.stdout_text, &result.stderr_text};
  int open_count = 2;
  char buf[4096];
  while (open_count > 0) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0 && !result.timed_out) {
      result.timed_out = true;
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
    }
    int rc = ::poll(fds, 2, result.timed_out ? 1000 : static_cast<int>(std::max<long long>(1, left.count())));
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (rc == 0 && result.timed_out) break;  // a stray grandchild keeps a pipe open
    for (int i = 0; i < 2; ++i) {
      if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      ssize_t n = ::read(fds[i].fd, buf, sizeof buf);
      if (n > 0) {
        auto room = opts.capture_limit - std::min(opts.capture_limit, sinks[i]->size());
        sinks[i]->append(buf, std::min<std::size_t>(room, static_cast<std::size_t>(n)));
      } else if (n == 0 || errno != EINTR) {
        fds[i].fd = -1;
        --open_count;
      }
    }
  }
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (WIFEXITED(status))
    result.exit_code = WEXITSTATUS(status);
  else if (WIFSIGNALED(status))
    result.exit_code = 128 + WTERMSIG(status);
  return result;
}

}  // namespace helmsman::jail
