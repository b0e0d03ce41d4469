#include "attreval/scorer.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "attreval/classifier.hpp"
#include "attreval/errors.hpp"

namespace attreval::scorer {

void check_compatible(const Capabilities& caps, std::size_t class_count, std::size_t m, std::size_t t) {
  if (caps.class_count != class_count) {
    throw ConfigError("scorer serves " + std::to_string(caps.class_count) + " classes but the dataset has " +
                      std::to_string(class_count));
  }
  if (caps.expects_m != m) {
    throw ConfigError("scorer expects_m=" + std::to_string(caps.expects_m) + " but the dataset has M=" +
                      std::to_string(m));
  }
  if (caps.expects_t != 0 && caps.expects_t != t) {
    throw ConfigError("scorer expects_t=" + std::to_string(caps.expects_t) + " but the dataset has T=" +
                      std::to_string(t));
  }
}

ModelScorer::ModelScorer(const autodiff::Graph& graph, std::size_t expects_t) : graph_(graph), expects_t_(expects_t) {}

Capabilities ModelScorer::capabilities() const {
  return {graph_.class_count(), graph_.input_spec().channels, expects_t_};
}

Tensor ModelScorer::score_batch(const Tensor& batch) const {
  if (batch.rank() != 3) throw ConfigError("score_batch expects a [B, M, T] batch");
  return model::predict_probabilities(graph_, batch);
}

// ------------------------------------------------------------ child process

struct ProcessScorer::Child {
  pid_t pid = -1;
  int to_child = -1;
  int from_child = -1;
  std::string buffer;
  std::string command;
};

namespace {

void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

}  // namespace

std::vector<std::string> split_command(const std::string& command) {
  std::vector<std::string> words;
  std::string word;
  bool quoted = false;
  bool any = false;
  for (char c : command) {
    if (c == '"') {
      quoted = !quoted;
      any = true;
    } else if (!quoted && std::isspace(static_cast<unsigned char>(c))) {
      if (any) words.push_back(word);
      word.clear();
      any = false;
    } else {
      word.push_back(c);
      any = true;
    }
  }
  if (quoted) throw ConfigError("unbalanced quote in scorer command: " + command);
  if (any) words.push_back(word);
  return words;
}

ProcessScorer::ProcessScorer(std::vector<std::string> argv, ProcessOptions options)
    : child_(std::make_unique<Child>()), options_(options) {
  if (argv.empty()) throw ConfigError("empty scorer command");
  if (options_.request_batch == 0) options_.request_batch = 64;
  for (const auto& a : argv) child_->command += (child_->command.empty() ? "" : " ") + a;

  int in_pipe[2];
  int out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0) {
    throw ScorerError(std::string("pipe failed: ") + std::strerror(errno));
  }
  std::vector<char*> cargv;
  for (auto& a : argv) cargv.push_back(a.data());
  cargv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw ScorerError(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execvp(cargv[0], cargv.data());
    std::_Exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  child_->pid = pid;
  child_->to_child = in_pipe[1];
  child_->from_child = out_pipe[0];
  ::signal(SIGPIPE, SIG_IGN);

  const std::string reply = exchange(R"({"hello": 1})");
  try {
    const auto j = nlohmann::json::parse(reply);
    caps_.class_count = j.at("class_count").get<std::size_t>();
    caps_.expects_m = j.at("expects_m").get<std::size_t>();
    caps_.expects_t = j.at("expects_t").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ScorerError("malformed handshake from '" + child_->command + "': " + reply);
  }
  if (caps_.class_count == 0 || caps_.expects_m == 0) {
    throw ScorerError("handshake from '" + child_->command + "' declares no classes or channels");
  }
}

ProcessScorer::~ProcessScorer() {
  if (!child_) return;
  close_fd(child_->to_child);
  close_fd(child_->from_child);
  if (child_->pid > 0) {
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(child_->pid, &status, WNOHANG) != 0) return;
      ::usleep(10000);
    }
    ::kill(child_->pid, SIGKILL);
    ::waitpid(child_->pid, &status, 0);
  }
}

std::string ProcessScorer::exchange(const std::string& line) const {
  Child& c = *child_;
  std::string payload = line + "\n";
  const char* p = payload.data();
  std::size_t left = payload.size();
  while (left > 0) {
    const ssize_t n = ::write(c.to_child, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ScorerError("scorer process '" + c.command + "' closed its input (" + std::strerror(errno) + ")");
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }

  const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
  for (;;) {
    const auto nl = c.buffer.find('\n');
    if (nl != std::string::npos) {
      std::string out = c.buffer.substr(0, nl);
      c.buffer.erase(0, nl + 1);
      if (!out.empty() && out.back() == '\r') out.pop_back();
      return out;
    }
    const auto remaining =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      throw ScorerError("scorer process '" + c.command + "' timed out after " +
                        std::to_string(options_.timeout.count()) + " ms");
    }
    pollfd pfd{c.from_child, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining.count(), 1 << 30)));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw ScorerError(std::string("poll failed: ") + std::strerror(errno));
    }
    if (ready == 0) continue;
    char chunk[65536];
    const ssize_t n = ::read(c.from_child, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ScorerError(std::string("read from scorer failed: ") + std::strerror(errno));
    }
    if (n == 0) {
      int status = 0;
      std::string why = "closed its output";
      if (::waitpid(c.pid, &status, WNOHANG) == c.pid) {
        c.pid = -1;
        why = WIFEXITED(status) ? "exited with status " + std::to_string(WEXITSTATUS(status)) : "was killed";
      }
      throw ScorerError("scorer process '" + c.command + "' " + why);
    }
    c.buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

Tensor ProcessScorer::score_batch(const Tensor& batch) const {
  if (batch.rank() != 3) throw ConfigError("score_batch expects a [B, M, T] batch");
  const std::size_t b = batch.dim(0);
  const std::size_t m = batch.dim(1);
  const std::size_t t = batch.dim(2);
  const std::size_t per = m * t;
  const std::size_t classes = caps_.class_count;
  Tensor out({b, classes});

  std::lock_guard lock(mutex_);
  for (std::size_t start = 0; start < b; start += options_.request_batch) {
    const std::size_t n = std::min(options_.request_batch, b - start);
    const std::uint64_t id = next_id_++;
    nlohmann::json request;
    request["id"] = id;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
      const double* src = batch.data() + (start + i) * per;
      rows.push_back(std::vector<double>(src, src + per));
    }
    request["batch"] = std::move(rows);
    request["m"] = m;
    request["t"] = t;
    const std::string reply = exchange(request.dump());

    nlohmann::json response;
    try {
      response = nlohmann::json::parse(reply);
    } catch (const nlohmann::json::exception&) {
      throw ScorerError("malformed response line for request " + std::to_string(id) + ": " + reply.substr(0, 200));
    }
    if (response.contains("error")) {
      throw ScorerError("scorer reported an error for request " + std::to_string(id) + ": " +
                        response["error"].dump());
    }
    if (!response.contains("id") || response["id"] != id) {
      throw ScorerError("response id mismatch: expected " + std::to_string(id) + ", got " +
                        (response.contains("id") ? response["id"].dump() : std::string("none")));
    }
    const auto& scores = response.at("scores");
    if (!scores.is_array() || scores.size() != n) {
      throw ScorerError("response " + std::to_string(id) + " carries " +
                        std::to_string(scores.is_array() ? scores.size() : 0) + " score vectors for " +
                        std::to_string(n) + " inputs");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = scores[i];
      if (!row.is_array() || row.size() != classes) {
        throw ScorerError("response " + std::to_string(id) + " has a score vector of the wrong length");
      }
      double sum = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        if (!row[c].is_number()) throw ScorerError("non-numeric score in response " + std::to_string(id));
        const double v = row[c].get<double>();
        out[(start + i) * classes + c] = v;
        sum += v;
      }
      if (!(std::abs(sum - 1.0) <= 1e-6)) {
        throw ScorerError("probabilities in response " + std::to_string(id) + " sum to " + std::to_string(sum));
      }
    }
  }
  return out;
}

}  // namespace attreval::scorer
