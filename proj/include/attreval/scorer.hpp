#pragma once

// Uniform re-scoring interface. The built-in scorer wraps a Graph; the
// process scorer talks newline-delimited JSON to a child process:
//
//   -> {"hello": 1}
//   <- {"class_count": C, "expects_m": M, "expects_t": T}
//   -> {"id": n, "batch": [[...M*T values...], ...], "m": M, "t": T}
//   <- {"id": n, "scores": [[...C probabilities...], ...]}

#include <chrono>
#include <cstddef>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "attreval/autodiff.hpp"
#include "attreval/tensor.hpp"

namespace attreval::scorer {

struct Capabilities {
  std::size_t class_count = 0;
  std::size_t expects_m = 0;
  std::size_t expects_t = 0;  // 0 accepts any length
};

// Throws ConfigError naming both values when the scorer cannot serve data of
// the given shape.
void check_compatible(const Capabilities& caps, std::size_t class_count, std::size_t m, std::size_t t);

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual Capabilities capabilities() const = 0;
  // [B, M, T] -> [B, C] class probabilities, order preserving. Thread-safe.
  virtual Tensor score_batch(const Tensor& batch) const = 0;
  // Non-null when input gradients are available.
  virtual const autodiff::Graph* graph() const { return nullptr; }
};

class ModelScorer : public Scorer {
 public:
  ModelScorer(const autodiff::Graph& graph, std::size_t expects_t = 0);
  Capabilities capabilities() const override;
  Tensor score_batch(const Tensor& batch) const override;
  const autodiff::Graph* graph() const override { return &graph_; }

 private:
  const autodiff::Graph& graph_;
  std::size_t expects_t_;
};

struct ProcessOptions {
  std::chrono::milliseconds timeout{60000};
  std::size_t request_batch = 64;
};

// Spawns `argv` (argv[0] resolved through PATH), performs the handshake in the
// constructor and serialises requests. Any protocol violation, timeout or
// child exit raises ScorerError.
class ProcessScorer : public Scorer {
 public:
  explicit ProcessScorer(std::vector<std::string> argv, ProcessOptions options = {});
  ~ProcessScorer() override;
  ProcessScorer(const ProcessScorer&) = delete;
  ProcessScorer& operator=(const ProcessScorer&) = delete;

  Capabilities capabilities() const override { return caps_; }
  Tensor score_batch(const Tensor& batch) const override;

 private:
  struct Child;
  std::string exchange(const std::string& line) const;

  std::unique_ptr<Child> child_;
  ProcessOptions options_;
  Capabilities caps_;
  mutable std::mutex mutex_;
  mutable std::uint64_t next_id_ = 1;
};

// Splits a shell-like command line on whitespace; double quotes group words.
std::vector<std::string> split_command(const std::string& command);

}  // namespace attreval::scorer
