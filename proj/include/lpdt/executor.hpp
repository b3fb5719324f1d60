// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>

#include "lpdt/tensor.hpp"

namespace lpdt {

/// Runs independent per-node work on a fixed number of threads. Node i is
/// always handled by worker i % threads, and run() returns only after every
/// call finished, so each call acts as a barrier between round phases.
class Executor {
 public:
  explicit Executor(unsigned threads = 1) : threads_(threads == 0 ? 1 : threads) {}

  unsigned threads() const { return threads_; }

  /// Calls fn(i) for i in [0, n). The first exception thrown by any call is
  /// rethrown after all workers have stopped.
  void run(Index n, const std::function<void(Index)>& fn) const;

 private:
  unsigned threads_;
};

}  // namespace lpdt
