#include "lpt/oracle/external.hpp"

#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <map>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"
#include "lpt/errors.hpp"
#include "lpt/util/log.hpp"

namespace lpt::oracle {

namespace {

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

}  // namespace

ExternalOracle::ExternalOracle(std::string command, std::vector<std::string> scores, double timeout_s)
    : command_(std::move(command)), scores_(std::move(scores)), timeout_s_(timeout_s) {
  if (!(timeout_s_ > 0)) throw ConfigError("oracle.timeout_s must be > 0");
  // A child that exits early must surface as a failed request, not kill us.
  std::signal(SIGPIPE, SIG_IGN);
  spawn();
}

void ExternalOracle::spawn() {
  pending_.clear();
  int in_pipe[2], out_pipe[2];
  if (::pipe(in_pipe) != 0) throw OracleError(std::string("pipe: ") + std::strerror(errno));
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw OracleError(std::string("pipe: ") + std::strerror(errno));
  }
  pid_ = ::fork();
  if (pid_ < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    throw OracleError(std::string("fork: ") + std::strerror(errno));
  }
  if (pid_ == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  ::fcntl(to_child_, F_SETFD, FD_CLOEXEC);
  ::fcntl(from_child_, F_SETFD, FD_CLOEXEC);
  set_nonblocking(to_child_);
  set_nonblocking(from_child_);
  alive_ = true;
}

ExternalOracle::~ExternalOracle() { shutdown(); }

void ExternalOracle::shutdown() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    // Closing stdin asks the child to finish; give it a moment, then kill.
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
        pid_ = -1;
        break;
      }
      ::usleep(10000);
    }
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
  }
  alive_ = false;
}

std::vector<ScoreResult> ExternalOracle::score_batch(const std::vector<std::string>& seqs) {
  std::vector<ScoreResult> out(seqs.size());
  if (seqs.empty()) return out;
  if (!alive_) {
    log::warn("oracle: restarting '" + command_ + "'");
    spawn();
  }

  std::map<long long, std::size_t> outstanding;
  std::string outbox;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const long long id = next_id_++;
    outstanding[id] = i;
    nlohmann::ordered_json req{{"id", id}, {"seq", seqs[i]}, {"scores", scores_}};
    outbox += req.dump() + "\n";
  }
  std::size_t written = 0;

  auto handle_line = [&](const std::string& line) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      log::warn("oracle: ignoring malformed line: " + line.substr(0, 200));
      return;
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_number_integer()) {
      log::warn("oracle: ignoring response without an integer id: " + line.substr(0, 200));
      return;
    }
    const auto it = outstanding.find(j["id"].get<long long>());
    if (it == outstanding.end()) {
      log::warn("oracle: ignoring response with unknown id " + j["id"].dump());
      return;
    }
    ScoreResult& r = out[it->second];
    if (j.contains("error")) {
      r.error = j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump();
      if (r.error.empty()) r.error = "oracle error";
    } else if (j.contains("values") && j["values"].is_array() &&
               j["values"].size() == scores_.size()) {
      for (const auto& v : j["values"]) {
        if (!v.is_number() || !std::isfinite(v.get<double>())) {
          r.values.clear();
          r.error = "non-numeric or non-finite value";
          break;
        }
        r.values.push_back(v.get<double>());
      }
    } else {
      r.error = "response needs 'values' with " + std::to_string(scores_.size()) + " entries or 'error'";
    }
    outstanding.erase(it);
  };

  using clock = std::chrono::steady_clock;
  auto last_progress = clock::now();
  char buf[65536];
  std::string failure;
  while (!outstanding.empty()) {
    pollfd fds[2];
    nfds_t n = 0;
    fds[n++] = {from_child_, POLLIN, 0};
    const bool want_write = written < outbox.size();
    if (want_write) fds[n++] = {to_child_, POLLOUT, 0};
    const double left = timeout_s_ - std::chrono::duration<double>(clock::now() - last_progress).count();
    if (left <= 0) {
      failure = "timeout after " + std::to_string(timeout_s_) + " s";
      break;
    }
    const int rc = ::poll(fds, n, static_cast<int>(std::ceil(left * 1000)));
    if (rc < 0) {
      if (errno == EINTR) continue;
      failure = std::string("poll: ") + std::strerror(errno);
      break;
    }
    if (rc == 0) continue;
    if (want_write && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t w = ::write(to_child_, outbox.data() + written, outbox.size() - written);
      if (w > 0) {
        written += static_cast<std::size_t>(w);
        last_progress = clock::now();
      } else if (w < 0 && errno != EAGAIN && errno != EINTR) {
        failure = "oracle process closed its input";
        alive_ = false;
        break;
      }
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t r = ::read(from_child_, buf, sizeof buf);
      if (r > 0) {
        pending_.append(buf, static_cast<std::size_t>(r));
        std::size_t pos;
        while ((pos = pending_.find('\n')) != std::string::npos) {
          std::string line = pending_.substr(0, pos);
          pending_.erase(0, pos + 1);
          if (!line.empty() && line.back() == '\r') line.pop_back();
          if (!line.empty()) handle_line(line);
        }
        last_progress = clock::now();
      } else if (r == 0) {
        failure = "oracle process exited";
        alive_ = false;
        break;
      } else if (errno != EAGAIN && errno != EINTR) {
        failure = std::string("read: ") + std::strerror(errno);
        alive_ = false;
        break;
      }
    }
  }
  if (!outstanding.empty()) {
    log::warn("oracle: " + std::to_string(outstanding.size()) + " request(s) failed: " + failure);
    for (const auto& [id, i] : outstanding) out[i].error = failure;
    // A stream with unanswered requests cannot be trusted to stay in sync.
    if (alive_) shutdown();
  }
  if (!alive_ && pid_ > 0) shutdown();
  return out;
}

}  // namespace lpt::oracle
