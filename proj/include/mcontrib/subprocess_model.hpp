#pragma once

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mcontrib/error.hpp"
#include "mcontrib/model.hpp"
#include "mcontrib/protocol.hpp"

namespace mcontrib {

/// External model running as a child process (`/bin/sh -c command`).
/// Requests go to the child's stdin and replies come back on its stdout, one
/// message per line; stderr is inherited. Calls are serialized.
class SubprocessModel final : public Model {
 public:
  SubprocessModel(std::string command, std::chrono::milliseconds timeout) : command_(std::move(command)), timeout_(timeout) {
    spawn();
    try {
      handshake_ = handshake();
    } catch (...) {
      shutdown();
      throw;
    }
  }

  SubprocessModel(const SubprocessModel&) = delete;
  SubprocessModel& operator=(const SubprocessModel&) = delete;

  ~SubprocessModel() override { shutdown(); }

  ModelInfo info() const override {
    ModelInfo mi;
    mi.name = handshake_.name;
    mi.protocol_version = handshake_.version;
    mi.output_dim = handshake_.output_dim;
    mi.batch_limit = handshake_.batch;
    mi.max_concurrency = 1;
    mi.bit_exact = false;
    return mi;
  }

  std::string identity() const override {
    return "exec:" + command_ + (handshake_.name.empty() ? "" : " (" + handshake_.name + ")");
  }

  const protocol::Handshake& metadata() const { return handshake_; }

  std::vector<OutputVector> predict_batch(std::span<const Sample> inputs) override {
    std::lock_guard lock(mutex_);
    if (inputs.size() > handshake_.batch) {
      throw ModelError("batch of " + std::to_string(inputs.size()) + " exceeds the model's batch limit " +
                       std::to_string(handshake_.batch));
    }
    const std::int64_t first = next_id_;
    std::string payload;
    for (const auto& s : inputs) {
      payload += protocol::encode_predict(next_id_++, s);
      payload += '\n';
    }
    write_all(payload);
    std::vector<OutputVector> out;
    out.reserve(inputs.size());
    for (std::size_t q = 0; q < inputs.size(); ++q) {
      const std::string line = read_line();
      try {
        out.push_back(protocol::expect_output(line, first + static_cast<std::int64_t>(q)));
        check_output(out.back(), handshake_.output_dim, "request " + std::to_string(first + q));
      } catch (const ModelError&) {
        // Drain the rest of the batch so the pipe stays in sync.
        for (std::size_t r = q + 1; r < inputs.size(); ++r) {
          try {
            read_line();
          } catch (const ModelError&) {
            break;
          }
        }
        rethrow_indexed(static_cast<long>(q));
      }
    }
    return out;
  }

 private:
  [[noreturn]] static void rethrow_indexed(long index) {
    try {
      throw;
    } catch (const NonFiniteOutputError& e) {
      throw NonFiniteOutputError(e.what(), index);
    } catch (const OutputLengthError& e) {
      throw OutputLengthError(e.what(), index);
    } catch (const RemoteModelError& e) {
      throw RemoteModelError(e.what(), index);
    } catch (const MalformedResponseError& e) {
      throw MalformedResponseError(e.what(), index);
    } catch (const TimeoutError& e) {
      throw TimeoutError(e.what(), index);
    } catch (const TransportError& e) {
      throw TransportError(e.what(), index);
    } catch (const ModelError& e) {
      throw ModelError(e.what(), index);
    }
  }

  void spawn() {
    int fds[2];
    if (socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
      throw TransportError(std::string("socketpair failed: ") + std::strerror(errno));
    }
    pid_ = fork();
    if (pid_ < 0) {
      ::close(fds[0]);
      ::close(fds[1]);
      throw TransportError(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
      ::dup2(fds[1], STDIN_FILENO);
      ::dup2(fds[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(fds[1]);
    fd_ = fds[0];
  }

  protocol::Handshake handshake() {
    write_all(protocol::encode_hello() + "\n");
    return protocol::parse_handshake(read_line());
  }

  void write_all(const std::string& data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError("writing to model process '" + command_ + "' failed: " + std::strerror(errno) +
                             exit_note());
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + timeout_;
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now());
      if (left.count() <= 0) {
        throw TimeoutError("model process '" + command_ + "' did not answer within " +
                           std::to_string(timeout_.count()) + " ms");
      }
      pollfd p{fd_, POLLIN, 0};
      const int ready = ::poll(&p, 1, static_cast<int>(left.count()));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) continue;
      char chunk[65536];
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError("reading from model process '" + command_ + "' failed: " + std::strerror(errno));
      }
      if (n == 0) throw TransportError("model process '" + command_ + "' closed its output" + exit_note());
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  std::string exit_note() {
    if (pid_ <= 0) return {};
    int status = 0;
    for (int attempt = 0; attempt < 20; ++attempt) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        if (WIFEXITED(status)) return " (exit status " + std::to_string(WEXITSTATUS(status)) + ")";
        if (WIFSIGNALED(status)) return " (killed by signal " + std::to_string(WTERMSIG(status)) + ")";
        return {};
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return {};
  }

  void shutdown() {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_WR);
    }
    if (pid_ > 0) {
      int status = 0;
      bool reaped = false;
      for (int attempt = 0; attempt < 100 && !reaped; ++attempt) {
        reaped = ::waitpid(pid_, &status, WNOHANG) == pid_;
        if (!reaped) std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      if (!reaped) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
      }
      pid_ = -1;
    }
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  std::string command_;
  std::chrono::milliseconds timeout_;
  pid_t pid_ = -1;
  int fd_ = -1;
  std::string buffer_;
  std::int64_t next_id_ = 0;
  protocol::Handshake handshake_;
  std::mutex mutex_;
};

}  // namespace mcontrib
